//! Bayesian online change-point detection over profile sequences.

pub mod alarms;
pub mod detector;
pub mod evaluate;
pub mod io;
pub mod models;
pub mod oracle;

pub use alarms::{alarm_scores, alarms, AlarmConfig, AlarmMethod, CumulativeSource, Direction};
pub use detector::{run, run_with, sample_profile_sequence, sample_profiles, Detector, Hazard, ModelSpec, RunLengthPosterior, Sequence, PRUNE_THRESHOLD};
pub use evaluate::{evaluate_events, roc_sweep, trapezoid_auc, Confusion, RocCurve, RocPoint, ScoredSeries};
pub use models::{Categorical, MultivariateNormal, Multinomial, NiwPrior, ObservationModel};
pub use oracle::{brute_force_oracle, ORACLE_MAX_T};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CpdError {
    #[error("hazard parameter lambda must be finite and > 1, got {0}")]
    InvalidHazard(f64),
    #[error("empty sequence")]
    EmptySequence,
    #[error("profile id {id} outside alphabet of size {k}")]
    OutOfAlphabet { id: usize, k: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("count vector sums to {got}, expected {expected}")]
    CountSum { expected: u32, got: u32 },
    #[error("non-finite predictive at step {step} for run length {run_length}")]
    NonFinitePredictive { step: usize, run_length: usize },
    #[error("sequence type does not match the {0} model")]
    VariantMismatch(&'static str),
    #[error("oracle limited to T <= {max}, got {got}")]
    TooLong { max: usize, got: usize },
    #[error("event day {day} outside sequence of length {len}")]
    EventOutOfRange { day: usize, len: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Kernel(#[from] crate::numkernel::KernelError),
}
