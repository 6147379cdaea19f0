//! Crate-wide error type.
//!
//! One enum covers the failure taxonomy of the whole pipeline so that
//! callers (in particular the CLI) can classify errors into configuration
//! problems versus runtime/data problems.

use thiserror::Error;

/// Errors produced by any stage of the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A malformed input row, reported with its 1-based line number.
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    /// The same calendar date appeared twice in one source.
    #[error("duplicate date {0}")]
    DuplicateDate(chrono::NaiveDate),

    /// A value outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// An argument violated an operation's precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Incompatible shapes between data and parameters.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A feature column without the spread required by the requested scaler.
    #[error("degenerate feature column {column}: {message}")]
    DegenerateFeature { column: usize, message: String },

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch} (learning rate {learning_rate})")]
    Diverged { epoch: usize, learning_rate: f64 },

    /// Invalid configuration, detected before any data work starts.
    #[error("config error: {0}")]
    Config(String),

    /// A runtime data problem (missing file, empty result, bad reference).
    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True when the error stems from configuration rather than data or
    /// runtime behavior. The CLI maps this to its validation exit code.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
