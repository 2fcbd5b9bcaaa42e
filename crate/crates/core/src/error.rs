use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, RodeoError>;

#[derive(Debug, Error)]
pub enum RodeoError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("column {0:?} not found in header")]
    MissingColumn(String),

    /// Row is 1-based counting data rows (the header is row 0).
    #[error("cannot parse {value:?} as a number at row {row}, column {column:?}")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("insufficient support: {support} positively weighted points, need {required}")]
    InsufficientSupport { support: usize, required: usize },

    #[error("singular system: {0}")]
    Singular(String),
}

impl RodeoError {
    /// Numerical failures (as opposed to bad input) map to CLI exit code 2.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            RodeoError::InsufficientSupport { .. } | RodeoError::Singular(_)
        )
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        RodeoError::InvalidInput(msg.into())
    }
}
