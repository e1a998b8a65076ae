use crate::LikelihoodError;
use seedmem_core::Tensor;
use std::f64::consts::PI;
use std::fmt;
use std::io::Write;

/// `(k/2) log(2 pi sigma^2) + |z - mu|^2 / (2 sigma^2)` with `f64` accumulation.
pub fn nll_gaussian(z: &Tensor, mu: f64, sigma: f64) -> Result<f64, LikelihoodError> {
    nll_slice(z.data(), mu, sigma)
}

pub fn nll_slice(z: &[f32], mu: f64, sigma: f64) -> Result<f64, LikelihoodError> {
    if !(sigma > 0.0) {
        return Err(LikelihoodError::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    if z.is_empty() {
        return Err(LikelihoodError::InvalidArgument("empty latent".into()));
    }
    let k = z.len() as f64;
    let ss: f64 = z
        .iter()
        .map(|&v| {
            let d = v as f64 - mu;
            d * d
        })
        .sum();
    Ok(0.5 * k * (2.0 * PI * sigma * sigma).ln() + ss / (2.0 * sigma * sigma))
}

/// Normal approximation of the NLL of a k-dimensional N(0, sigma^2 I) sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CltReference {
    pub k: usize,
    pub mu: f64,
    pub var: f64,
    pub sigma: f64,
}

impl CltReference {
    pub fn std(&self) -> f64 {
        self.var.sqrt()
    }

    pub fn density(&self, x: f64) -> f64 {
        let z = (x - self.mu) / self.std();
        (-0.5 * z * z).exp() / (self.std() * (2.0 * PI).sqrt())
    }
}

pub fn clt_reference(k: usize, sigma: f64) -> Result<CltReference, LikelihoodError> {
    if k < 100 {
        return Err(LikelihoodError::InvalidArgument(format!(
            "k = {k} is too small for the normal approximation (need k >= 100)"
        )));
    }
    if !(sigma > 0.0) {
        return Err(LikelihoodError::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    let kf = k as f64;
    Ok(CltReference { k, mu: kf * (0.5 * (2.0 * PI * sigma * sigma).ln() + 0.5), var: kf / 2.0, sigma })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SetTag {
    Erased,
    Reference,
    Normal,
}

impl fmt::Display for SetTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SetTag::Erased => "E",
            SetTag::Reference => "R",
            SetTag::Normal => "N",
        })
    }
}

/// NLL values of a population of seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct NllSampleSet {
    values: Vec<f64>,
    tag: SetTag,
    k: usize,
}

impl NllSampleSet {
    pub fn new(values: Vec<f64>, tag: SetTag, k: usize) -> Result<Self, LikelihoodError> {
        if values.is_empty() {
            return Err(LikelihoodError::InvalidArgument("NLL sample set is empty".into()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(LikelihoodError::InvalidArgument(format!("non-finite NLL {v}")));
        }
        if k >= 2 {
            if let Some(v) = values.iter().find(|&&v| v <= 0.0) {
                return Err(LikelihoodError::InvalidArgument(format!("NLL {v} is not positive")));
            }
        }
        Ok(NllSampleSet { values, tag, k })
    }

    /// Scores each latent under the standard-normal prior.
    pub fn from_latents<'a>(
        latents: impl IntoIterator<Item = &'a [f32]>,
        tag: SetTag,
    ) -> Result<Self, LikelihoodError> {
        let mut k = 0;
        let mut values = Vec::new();
        for z in latents {
            if k == 0 {
                k = z.len();
            } else if z.len() != k {
                return Err(LikelihoodError::InvalidArgument("latents of mixed dimension".into()));
            }
            values.push(nll_slice(z, 0.0, 1.0)?);
        }
        NllSampleSet::new(values, tag, k)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn tag(&self) -> SetTag {
        self.tag
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Halves of the set, split by position.
    pub fn split_half(&self) -> (NllSampleSet, NllSampleSet) {
        let mid = self.values.len() / 2;
        (
            NllSampleSet { values: self.values[..mid].to_vec(), tag: self.tag, k: self.k },
            NllSampleSet { values: self.values[mid..].to_vec(), tag: self.tag, k: self.k },
        )
    }

    /// One value per line after a `#` comment header carrying tag, k and count.
    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "# tag={} k={} n={}", self.tag, self.k, self.values.len())?;
        for v in &self.values {
            writeln!(w, "{v}")?;
        }
        Ok(())
    }
}
