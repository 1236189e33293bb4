use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, MoftError>;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum MoftError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt file: {0}")]
    CorruptFile(String),

    /// A non-finite value; `index` is the flat offset of the first offender.
    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("profile mismatch: {0}")]
    ProfileMismatch(String),

    #[error("profile has no calibration statistics for channel {0}")]
    CalibrationMissing(usize),

    #[error("reference vector at ({row}, {col}) has zero norm")]
    DegenerateReference { row: usize, col: usize },

    #[error("correlation undefined: every frame has a zero displacement")]
    UndefinedCorrelation,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("guidance diverged at step {step} (loss {loss})")]
    Divergence { step: usize, loss: f64 },
}

impl MoftError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MoftError::Io {
            path: path.into(),
            source,
        }
    }
}
