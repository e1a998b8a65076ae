use crate::{CltReference, LikelihoodError, NllSampleSet};
use statrs::distribution::{ContinuousCDF, Normal};

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    s
}

/// Empirical quantile at level `(i + 0.5) / m` of a sorted sample.
fn quantile(sorted: &[f64], i: usize, m: usize) -> f64 {
    let n = sorted.len();
    let idx = ((2 * i + 1) * n) / (2 * m);
    sorted[idx.min(n - 1)]
}

/// Wasserstein-1 distance between two empirical distributions on the line.
///
/// Both samples are sorted and read off at the `m = max(|a|, |b|)` quantile
/// levels `(i + 0.5) / m`; the distance is the mean absolute difference of
/// matched quantiles. For equal sample counts this is the exact optimal
/// coupling.
pub fn emd_1d(a: &[f64], b: &[f64]) -> Result<f64, LikelihoodError> {
    if a.is_empty() || b.is_empty() {
        return Err(LikelihoodError::InvalidArgument("emd_1d needs two non-empty samples".into()));
    }
    let sa = sorted(a);
    let sb = sorted(b);
    let m = sa.len().max(sb.len());
    let total: f64 = (0..m).map(|i| (quantile(&sa, i, m) - quantile(&sb, i, m)).abs()).sum();
    Ok(total / m as f64)
}

/// `m` equally spaced quantiles of N(ref.mu, ref.var), at levels `(i + 0.5) / m`.
pub fn reference_quantiles(reference: &CltReference, m: usize) -> Vec<f64> {
    let normal = Normal::new(reference.mu, reference.std()).expect("reference has positive variance");
    (0..m).map(|i| normal.inverse_cdf((i as f64 + 0.5) / m as f64)).collect()
}

pub fn emd_to_reference(s: &NllSampleSet, reference: &CltReference) -> Result<f64, LikelihoodError> {
    if s.k() != reference.k {
        return Err(LikelihoodError::InvalidArgument(format!(
            "set has k = {}, reference has k = {}",
            s.k(),
            reference.k
        )));
    }
    let q = reference_quantiles(reference, s.values().len());
    emd_1d(s.values(), &q)
}

/// `EMD(E, N) / EMD(R, N)`.
pub fn relative_distance(
    e: &NllSampleSet,
    r: &NllSampleSet,
    reference: &CltReference,
) -> Result<f64, LikelihoodError> {
    let num = emd_to_reference(e, reference)?;
    let den = emd_to_reference(r, reference)?;
    if den == 0.0 {
        return Err(LikelihoodError::DegenerateReference(
            "reference set coincides with the normal reference; d_N is undefined".into(),
        ));
    }
    Ok(num / den)
}
