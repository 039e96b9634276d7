use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("validation error on `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("media error: {0}")]
    Media(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("token {0} is outside the score vocabulary")]
    Vocabulary(usize),

    #[error("no numeric score in {0:?}")]
    ScoreParse(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("coverage error: {} id(s) missing: {}", missing.len(), missing.join(", "))]
    Coverage { missing: Vec<String> },

    #[error("transport error: {message}")]
    Transport { message: String, retryable: bool },

    #[error("protocol error on `{field}`: {message}")]
    Protocol { field: String, message: String },

    #[error("backend error [{code}]: {message}")]
    Backend { code: String, message: String },

    #[error("backbone does not support {0}")]
    Unsupported(&'static str),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn protocol(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Protocol {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Process exit code for this error class: 2 usage/validation, 3 data, 4 backend.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation { .. } | Error::Argument(_) => 2,
            Error::Transport { .. }
            | Error::Protocol { .. }
            | Error::Backend { .. }
            | Error::Unsupported(_) => 4,
            _ => 3,
        }
    }
}
