use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A document or argument failed validation; `path` locates the offending item.
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },

    #[error("empty space: every configuration is excluded")]
    EmptySpace,

    #[error("budget exceeded: {needed} items requested, budget is {budget}")]
    Budget { needed: u64, budget: u64 },

    #[error("pairing failed: the {side} arm {assignment} is excluded")]
    Pairing { side: String, assignment: String },

    #[error("infeasible sample: {message}")]
    Infeasible { message: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate sample: {0}")]
    Degenerate(String),

    #[error("incomplete log: no usable measurement for {}", .ids.join(", "))]
    Incomplete { ids: Vec<String> },

    #[error("log mismatch: {0}")]
    LogMismatch(String),

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn invalid(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Invalid {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the filesystem rather than of the inputs' content.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
