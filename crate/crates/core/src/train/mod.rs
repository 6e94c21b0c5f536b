//! Alternating WGAN-GP training of the critic and generator.

mod adam;
mod config;
mod fit;
mod loss;
mod penalty;
mod step;

use std::path::PathBuf;

use thiserror::Error;

use crate::nn::{CheckpointError, ModelError};

pub use adam::{Adam, OptimizerConfig};
pub use config::TrainConfig;
pub use fit::{
    checkpoint_name, fit, read_loss_log, Corpus, EpochSummary, RunReport, CHECKPOINT_DIR,
    CONFIG_ECHO, LOSS_LOG, PROBE_DIR, PROBE_Z, REPORT_FILE, STATE_DIR,
};
pub use loss::{
    critic_loss, generator_loss, total_critic_loss, wasserstein_loss, FAKE_LABEL, REAL_LABEL,
};
pub use penalty::{gradient_penalty, penalty_terms, GpConfig, GpMode, PenaltyTerms};
pub use step::{
    critic_train_step, generator_train_step, sample_latent, CriticStep, GeneratorStep, LossRecord,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("batch sizes differ ({left} vs {right})")]
    BatchMismatch { left: usize, right: usize },
    #[error("label {0} is neither +1 nor -1")]
    Label(f32),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite {quantity}; training aborted")]
    NonFinite { quantity: String },
    #[error("exact penalty differentiation needs a piecewise-linear critic; use the finite-difference mode")]
    ExactPenaltyUnsupported,
    #[error("corpus: {0}")]
    Corpus(String),
    #[error("cannot resume: {0}")]
    Resume(String),
    #[error("{path}: {reason}")]
    Io { path: PathBuf, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Image(#[from] crate::image::ImageError),
}
