//! A miniature conditional latent diffusion model.
//!
//! * [`dataset`]: procedurally rendered 32x32 grayscale shapes (disc, square,
//!   cross) with blur, a constant background and faint high-frequency grain.
//! * [`vae`]: a closed-form linear autoencoder. Low-frequency DCT content is
//!   compressed by PCA into whitened "shape" channels; the highest DCT band is
//!   kept as whitened "grain" channels that the decoder renders at very low gain.
//! * [`schedule`]: cumulative noise levels and the deterministic step coefficients.
//! * [`denoiser`]: a two-layer MLP noise predictor with sinusoidal time
//!   embedding, additive concept embeddings and a time-gated skip.
//! * [`train`]: epsilon-prediction training with Adam and hand-derived gradients.
//! * [`sampler`]: deterministic generation from a seed `z_T`.
//! * [`checkpoint`]: the binary model file.

pub mod checkpoint;
pub mod concept;
pub mod config;
pub mod dataset;
pub mod dct;
pub mod denoiser;
pub mod optim;
pub mod sampler;
pub mod schedule;
pub mod train;
pub mod vae;

pub use checkpoint::{CheckpointMeta, ModelCheckpoint};
pub use concept::{ConceptDetector, ConceptLabel};
pub use config::{DatasetSpec, DenoiserConfig, ModelConfig, TrainConfig, VaeConfig};
pub use dataset::{make_dataset, ToyImage, IMAGE_LEN, IMAGE_SIDE};
pub use denoiser::{Denoiser, NoisePredictor};
pub use sampler::{diffusion_inference, generate_images, generate_latents, generate_observed};
pub use schedule::{build_schedule, forward_diffuse, NoiseSchedule, ScheduleKind};
pub use train::{build_model, train_denoiser, TrainLog};
pub use vae::{train_vae, LatentDecoder, LinearVae};

use seedmem_core::CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LdmError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("training failure: {0}")]
    TrainingFailure(String),
    #[error("inference failure at step {step}: {message}")]
    InferenceFailure { step: usize, message: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl LdmError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        LdmError::InvalidArgument(msg.into())
    }
}
