use thiserror::Error;

use bitext_core::checkpoint::CheckpointError;
use bitext_core::config::ConfigError;

/// Command failure, split by exit code: bad input or settings exit 1,
/// failures while running exit 2.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Io(io) => CliError::Runtime(io.into()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Attach a path to an I/O error; a missing input is a validation failure.
pub fn io_at(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            CliError::Validation(format!("missing file {}", path.display()))
        } else {
            CliError::Runtime(anyhow::anyhow!("{}: {e}", path.display()))
        }
    }
}
