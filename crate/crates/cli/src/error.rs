use std::path::PathBuf;

use thiserror::Error;

/// Exit code for a successful command.
pub const EXIT_OK: i32 = 0;
/// Exit code for configuration or assumption failures.
pub const EXIT_VALIDATION: i32 = 1;
/// Exit code for failures while computing or writing output.
pub const EXIT_RUNTIME: i32 = 2;
/// Exit code when some sweep cells failed.
pub const EXIT_PARTIAL: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {message}")]
    Schema { path: String, message: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("{0}")]
    Core(#[from] dhmm_core::Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to encode output: {0}")]
    Encode(String),
}

impl CliError {
    pub fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Schema {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Schema { .. } | Self::Validation(_) => EXIT_VALIDATION,
            Self::Core(e) => match e {
                dhmm_core::Error::NonConvergence { .. } | dhmm_core::Error::NumericFailure { .. } => {
                    EXIT_RUNTIME
                }
                _ => EXIT_VALIDATION,
            },
            Self::Io { .. } | Self::Encode(_) => EXIT_RUNTIME,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
