//! Synthetic cohort generation, preprocessing and synthetic missingness.

pub mod catalog;
pub mod corrupt;
pub mod generate;
pub mod io;
pub mod preprocess;
pub mod sample;

use thiserror::Error;

pub use catalog::{Catalog, Emission, ValueType, VariableSpec};
pub use corrupt::{corrupt_mcar, corrupt_mnar, McarConfig, MnarConfig, MnarRule};
pub use generate::{generate_cohort, CohortConfig, CohortTruth, PatientTruth};
pub use io::Cohort;
pub use preprocess::{
    apply_scaler, clip_and_flag, fit_scaler, invert_scaler, partition_patients, prepare, split_on_gaps, Partition,
    PrepareConfig, Prepared, RobustScalerState,
};
pub use sample::{binarize_mask, Corruption, Space, TimeSeriesSample, MISSING, OBSERVED, SYNTHETIC};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid catalog: {0}")]
    InvalidCatalog(String),
    #[error("catalog mismatch: {0}")]
    CatalogMismatch(String),
    #[error("unknown variable {0:?}")]
    UnknownVariable(String),
    #[error("wrong space: {0}")]
    WrongSpace(String),
    #[error("malformed sample: {0}")]
    Shape(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Kernel(#[from] crate::numkernel::KernelError),
}
