//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty calibration")]
    EmptyCalibration,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("dataset too small: {n} observations, need at least {min}")]
    DatasetTooSmall { n: usize, min: usize },

    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in row {row}")]
    NonFinite { row: usize },

    #[error("invalid alpha {alpha}: must lie strictly inside (0, 1)")]
    InvalidAlpha { alpha: f64 },

    #[error("invalid split fraction {value}: must lie strictly inside (0, 1)")]
    InvalidFraction { value: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate binning")]
    DegenerateBinning,

    #[error("degenerate difficulty")]
    DegenerateDifficulty,

    #[error("diagnostic-only measure")]
    DiagnosticOnly,

    #[error("measure expects {expected} prediction, got {got}")]
    MeasureMismatch {
        expected: &'static str,
        got: &'static str,
    },

    #[error("estimator not fitted: {0}")]
    Unfitted(&'static str),

    #[error("empty group: {0}")]
    EmptyGroup(String),

    #[error("empty test set")]
    EmptyTest,

    #[error("mismatched class sets across reports")]
    MismatchedClasses,

    #[error("invalid quantile level {q}: must lie strictly inside (0, 1)")]
    InvalidQuantileLevel { q: f64 },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// CLI exit code class: 2 for configuration errors, 3 for data errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidAlpha { .. }
            | Error::InvalidFraction { .. }
            | Error::InvalidParameter(_)
            | Error::InvalidQuantileLevel { .. }
            | Error::Json(_) => 2,
            _ => 3,
        }
    }
}
