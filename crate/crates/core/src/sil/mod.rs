//! Self-imitation policy gradients on toy sequence environments.

pub mod buffer;
pub mod config;
pub mod env;
pub mod experiment;
pub mod grad;
pub mod policy;
pub mod train;

use thiserror::Error;

use crate::embeddings::EmbeddingError;
use crate::metrics::MetricsError;
use crate::nested::NestedError;
use crate::seq_match::MatchError;

pub use buffer::{buffer_update, BufferCriterion, BufferEntry, ReplayBuffer};
pub use config::{ConfigError, TrainSpec};
pub use env::{EnvSpec, RewardKind, ToyEnv};
pub use experiment::{paired_experiment, run_training, PairedSummary, RunOutcome};
pub use grad::{reinforce_grad, wsil_d_grad, wsil_i_grad, SilTermConfig, Similarity};
pub use policy::{greedy_decode, sample_trajectories, soft_argmax, Policy, PolicyKind, Trajectory};
pub use train::{BaselineMode, LogRecord, Schedule, SilConfig, Trainer, Variant};

#[derive(Debug, Error)]
pub enum SilError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error(transparent)]
    Nested(#[from] NestedError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("log output: {0}")]
    Io(#[from] std::io::Error),
}
