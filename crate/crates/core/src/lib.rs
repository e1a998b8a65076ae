//! Numeric substrate shared by every seedmem crate: a dense `f32` tensor with
//! `f64` reductions, counter-based random streams, latent-space distances,
//! PSNR, a thin GEMM wrapper and the little-endian array container used for
//! checkpoints and seed dumps.

pub mod binfmt;
mod error;
pub mod linalg;
pub mod metrics;
pub mod rng;
mod tensor;

pub use error::CoreError;
pub use metrics::{cosine_distance, euclidean_distance, mse, psnr, PSNR_PEAK};
pub use rng::{sample_standard_normal, RngStream};
pub use tensor::Tensor;
