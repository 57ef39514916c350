//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv parse error: {0}")]
    Csv(String),

    #[error("non-numeric cell {value:?} at data row {row}, column {column:?}")]
    NonNumericCell {
        row: usize,
        column: String,
        value: String,
    },

    #[error("target column {0:?} not found in header")]
    MissingTargetColumn(String),

    #[error("dataset has no data rows")]
    EmptyData,

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("encoder was built from a different model")]
    EncoderModelMismatch,

    #[error(
        "coordinate descent did not converge within {sweeps} sweeps; \
         raise max_sweeps, loosen tol, or use a larger lambda"
    )]
    NonConvergence { sweeps: usize },

    #[error("pipeline failed on {failed} of {total} bootstrap resamples, fewer than 2 remain")]
    TooFewFits { failed: usize, total: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
