//! Experiment orchestration for the seed-memory testbed: the detection
//! classifier, experiment configs, the concept / image / shuffle / norm-sweep
//! experiments, reports and the command line.

pub mod classifier;
pub mod cli;
pub mod config;
pub mod experiments;
pub mod report;

pub use classifier::{train_toy_classifier, ClassifierError, ToyClassifier};
pub use config::{ExperimentConfig, ExperimentKind, ModelRole};
pub use experiments::{
    run_concept_experiment, run_experiment, run_image_experiment, run_norm_sweep, run_shuffle_experiment,
};
pub use report::{ExperimentReport, ExperimentRun, Row, Summary};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("report error: {0}")]
    Report(String),
    #[error("{failed} of {total} rows failed; first error: {first}")]
    TooManyFailures { failed: usize, total: usize, first: String },
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Model(#[from] seedmem_toyldm::LdmError),
    #[error(transparent)]
    Erasure(#[from] seedmem_erasure::ErasureError),
    #[error(transparent)]
    Inversion(#[from] seedmem_inversion::InversionError),
    #[error(transparent)]
    Sib(#[from] seedmem_sib::SibError),
    #[error(transparent)]
    Likelihood(#[from] seedmem_likelihood::LikelihoodError),
    #[error(transparent)]
    Core(#[from] seedmem_core::CoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// Process exit code: 2 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            _ => 1,
        }
    }
}
