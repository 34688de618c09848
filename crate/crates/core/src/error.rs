use thiserror::Error;

use crate::pathlog::PathLog;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A non-finite value appeared while evaluating the given layer
    /// (1-based, counting non-input layers; 0 is the loss itself).
    #[error("non-finite value in layer {layer}")]
    NonFinite { layer: usize },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("training diverged at iteration {iteration}")]
    Diverged { iteration: usize },

    /// Divergence during a Lockout path; carries everything recorded so far.
    #[error("path diverged at iteration {iteration}")]
    PathDiverged {
        iteration: usize,
        partial: Box<PathLog>,
    },

    #[error("format error at line {line}, column `{column}`: {message}")]
    Format {
        line: u64,
        column: String,
        message: String,
    },

    #[error("missing value in row {row} (line {line}), column `{column}`")]
    MissingValue { row: usize, line: u64, column: String },

    #[error("oracle error: {0}")]
    Oracle(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
