use crate::{CltReference, LikelihoodError, NllSampleSet};
use std::io::Write;

/// Shared-edge histogram of several NLL sets plus the reference density.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramTable {
    pub edges: Vec<f64>,
    pub bin_centers: Vec<f64>,
    pub ref_density: Vec<f64>,
    pub columns: Vec<(String, Vec<u64>)>,
}

impl HistogramTable {
    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        write!(w, "bin_center,ref_density")?;
        for (name, _) in &self.columns {
            write!(w, ",count_{name}")?;
        }
        writeln!(w)?;
        for i in 0..self.bin_centers.len() {
            write!(w, "{},{}", self.bin_centers[i], self.ref_density[i])?;
            for (_, c) in &self.columns {
                write!(w, ",{}", c[i])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Bins all sets on one grid spanning their values and `mu +- 4 std` of the reference.
pub fn histogram_export(
    sets: &[&NllSampleSet],
    reference: &CltReference,
    bins: usize,
) -> Result<HistogramTable, LikelihoodError> {
    if bins < 10 {
        return Err(LikelihoodError::InvalidArgument(format!("need at least 10 bins, got {bins}")));
    }
    let sd = reference.std();
    let mut lo = reference.mu - 4.0 * sd;
    let mut hi = reference.mu + 4.0 * sd;
    for s in sets {
        for &v in s.values() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| lo + width * i as f64).collect();
    let bin_centers: Vec<f64> = (0..bins).map(|i| lo + width * (i as f64 + 0.5)).collect();
    let ref_density = bin_centers.iter().map(|&x| reference.density(x)).collect();
    let mut columns = Vec::with_capacity(sets.len());
    let mut seen: Vec<String> = Vec::new();
    for s in sets {
        let mut counts = vec![0u64; bins];
        for &v in s.values() {
            let i = (((v - lo) / width) as usize).min(bins - 1);
            counts[i] += 1;
        }
        let base = s.tag().to_string();
        let mut name = base.clone();
        let mut n = 2;
        while seen.contains(&name) {
            name = format!("{base}{n}");
            n += 1;
        }
        seen.push(name.clone());
        columns.push((name, counts));
    }
    Ok(HistogramTable { edges, bin_centers, ref_density, columns })
}
