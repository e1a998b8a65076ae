//! Distances among memory seeds and to the direct seed.

use crate::SibError;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryReport {
    pub count: usize,
    /// Mean cosine distance over all unordered pairs.
    pub mean_pairwise_cosine: f64,
    /// Mean Euclidean distance over all unordered pairs.
    pub mean_pairwise_euclidean: f64,
    pub mean_dist_to_direct: f64,
    /// Population standard deviation of the distances to the direct seed.
    pub std_dist_to_direct: f64,
    /// `std_dist_to_direct / mean_dist_to_direct`.
    pub cv: f64,
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

fn dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>().sqrt()
}

pub fn geometry_report(seeds: &[&[f32]], direct: &[f32]) -> Result<GeometryReport, SibError> {
    let n = seeds.len();
    if n < 2 {
        return Err(SibError::InvalidArgument(format!("geometry needs at least 2 seeds, got {n}")));
    }
    if seeds.iter().any(|s| s.len() != direct.len()) {
        return Err(SibError::InvalidArgument("seed lengths differ".into()));
    }
    let norms: Vec<f64> = seeds.iter().map(|s| dot(s, s).sqrt()).collect();
    if norms.contains(&0.0) {
        return Err(SibError::InvalidArgument("cosine distance of a zero seed is undefined".into()));
    }
    let (mut cos, mut euc, mut pairs) = (0.0, 0.0, 0usize);
    for i in 0..n {
        for j in i + 1..n {
            let c = 1.0 - dot(seeds[i], seeds[j]) / (norms[i] * norms[j]);
            cos += c.clamp(0.0, 2.0);
            euc += dist(seeds[i], seeds[j]);
            pairs += 1;
        }
    }
    let d: Vec<f64> = seeds.iter().map(|s| dist(s, direct)).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let std = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    Ok(GeometryReport {
        count: n,
        mean_pairwise_cosine: cos / pairs as f64,
        mean_pairwise_euclidean: euc / pairs as f64,
        mean_dist_to_direct: mean,
        std_dist_to_direct: std,
        cv: if mean > 0.0 { std / mean } else { 0.0 },
    })
}
