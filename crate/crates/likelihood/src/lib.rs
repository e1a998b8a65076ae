//! Likelihood analysis of latent seeds.
//!
//! Seeds are scored by their negative log-likelihood under the latent prior
//! N(0, I). For dimension `k` the NLL of a genuine prior sample is close to
//! N(k (log(2 pi)/2 + 1/2), k/2), which serves as the reference distribution
//! `N`. Sets of seed NLLs are compared against it with the 1-D earth mover's
//! distance, and the relative distance
//!
//! ```text
//! d_N(E, R) = EMD(NLL(E), N) / EMD(NLL(R), N)
//! ```
//!
//! tells whether seeds of an erased concept `E` are as typical as seeds of
//! ordinary content `R` (values near 1) or sit far out in the tails.

mod emd;
mod histogram;
mod nll;

pub use emd::{emd_1d, emd_to_reference, reference_quantiles, relative_distance};
pub use histogram::{histogram_export, HistogramTable};
pub use nll::{clt_reference, nll_gaussian, nll_slice, CltReference, NllSampleSet, SetTag};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LikelihoodError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate reference: {0}")]
    DegenerateReference(String),
}

/// Interpretation anchors for `d_N`: 2.49 was reported for overlapping
/// distributions and 43.02 for clearly separated ones.
pub const D_N_OVERLAPPING: f64 = 2.49;
pub const D_N_FAR: f64 = 43.02;
