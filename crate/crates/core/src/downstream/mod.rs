//! Emotion prediction from profile embeddings and the experiment grid.

pub mod ablation;
pub mod auc;
pub mod cnn;
pub mod pipeline;
pub mod windows;

pub use ablation::{checkpoint_path, run_ablation, write_ablation_csv, AblationCell, AblationGrid, EvalSplit};
pub use auc::{binary_auc, weighted_auc};
pub use cnn::{accuracy, classifier_specs, train_emotion_cnn, ClassifierSpec, EmotionCnn, EmotionEpoch, EmotionReport};
pub use pipeline::{
    detect, emotion_windows, evaluate_emotion, event_roc, events_in, profile_samples, score_samples,
    write_predictions_csv, EmotionOutcome, EventConfig, LambdaRoc, ProfileModel, ProfiledSample,
};
pub use windows::{build_windows, windows_to_tensor, DayEmbedding, EmotionWindow, N_CLASSES, WINDOW_DAYS};

use crate::cpd::CpdError;
use crate::datagen::DataError;
use crate::numkernel::KernelError;
use crate::vqmodel::VqError;

#[derive(Debug, thiserror::Error)]
pub enum DownstreamError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("labels contain fewer than two classes")]
    SingleClass,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("missing checkpoint with training disabled: {0}")]
    MissingCheckpoint(String),
    #[error("training failed: {0}")]
    Training(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Vq(#[from] VqError),
    #[error(transparent)]
    Cpd(#[from] CpdError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
