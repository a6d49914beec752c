use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input file. `line` and `column` are 1-based.
    #[error("{}:{line}:{column}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("prior concentration must be strictly positive (entry {index} is {value})")]
    NonPositivePrior { index: usize, value: f64 },
    #[error("unknown class label `{0}`")]
    UnknownLabel(String),
    #[error("class `{0}` is the no-anomaly class and has no failure cost")]
    NoFailureForNoAnomaly(String),
    #[error("quantile {0} is outside (0, 1)")]
    InvalidQuantile(f64),
    #[error("invalid {what}: {message}")]
    Invalid { what: &'static str, message: String },
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn invalid(what: &'static str, message: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            message: message.into(),
        }
    }

    /// True for errors caused by user-supplied input (files, flags, labels).
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::Numerical(_))
    }
}
