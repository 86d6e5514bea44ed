//! Vector-quantised convolutional autoencoder over daily multivariate series.

pub mod arch;
pub mod codebook;
pub mod metrics;
pub mod profile;
pub mod train;

pub use arch::{Batch, ForwardOutput, LossBreakdown, Variant, VqConfig, VqModel};
pub use codebook::{Codebook, QuantizeResult};
pub use metrics::{f1_score, reconstruction_metrics, to_original, VariableMetrics};
pub use profile::{
    extract_profiles, profile_sequence, rank_codes, read_profile_csv, write_profile_csv, ProfileSequence,
};
pub use train::{evaluate_samples, train, EpochRecord, TrainConfig, TrainReport};

use crate::datagen::DataError;
use crate::numkernel::KernelError;

#[derive(Debug, thiserror::Error)]
pub enum VqError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("sample in wrong space: {0}")]
    WrongSpace(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("training failed at epoch {epoch}, batch {batch}: {detail}")]
    Training { epoch: usize, batch: usize, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Data(#[from] DataError),
}
