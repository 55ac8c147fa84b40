use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid scenario: {field}: {message}")]
    Validation { field: String, message: String },
    #[error(transparent)]
    Platform(#[from] chpc_core::Error),
    #[error(transparent)]
    Api(#[from] chpc_api::ApiError),
}

impl HarnessError {
    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        HarnessError::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Process exit code: 2 for unusable input, 1 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Io { .. }
            | HarnessError::Parse { .. }
            | HarnessError::Validation { .. } => 2,
            HarnessError::Platform(_) | HarnessError::Api(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
