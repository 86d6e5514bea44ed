//! Minimal reverse-mode compute kernel: `[B, C, L]` tensors, layers with
//! hand-written backward passes, losses, Adam and a finite-difference checker.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod optim;
pub mod tensor;

use thiserror::Error;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use gradcheck::{compare_gradients, grad_check, GradCheckReport};
pub use layers::{conv_block, deconv_block, Layer, LayerSpec, Mode, Sequential};
pub use loss::{loss_eval, masked_mse, weighted_bce_logits, LossKind, LossOutput};
pub use optim::{clip_grad_norm, Adam, AdamConfig, EarlyStopping, Parameter, PlateauScheduler};
pub use tensor::{Shape3, Tensor3};

/// Seeded generator used for initialization, dropout and sampling.
pub type KernelRng = rand_chacha::ChaCha8Rng;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("shape mismatch in {layer}: expected {expected}, got {got}")]
    ShapeMismatch {
        layer: String,
        expected: String,
        got: String,
    },
    #[error("backward called on {layer} without a recorded forward pass")]
    NoRecordedForward { layer: String },
    #[error("non-finite gradient in parameter {parameter} at index {index}")]
    NonFiniteGradient { parameter: String, index: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
