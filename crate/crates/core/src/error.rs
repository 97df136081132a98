use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("side_of called on a degenerate (zero-normal) hyperplane")]
    DegenerateHyperplane,

    #[error("invalid argument: {0}")]
    Usage(String),

    /// Numerical failure inside the LP solver. Retryable.
    #[error("LP solver failure: {0}")]
    Solver(String),

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("protocol error: {0}")]
    Protocol(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            what,
            reason: reason.into(),
        }
    }

    /// True for failures that may succeed when the same work is retried.
    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Solver(_) | Error::Io { .. } | Error::Protocol(_))
    }
}
