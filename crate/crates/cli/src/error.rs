use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("output directory {0} is locked by another run")]
    Locked(PathBuf),

    #[error(transparent)]
    Core(#[from] prequential::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn format(path: &Path, reason: impl Into<String>) -> Self {
        CliError::Format {
            path: path.to_path_buf(),
            reason: reason.into(),
        }
    }

    /// Process exit status: 1 for usage and configuration problems, 2 for
    /// numerical failures, 3 for anything touching the filesystem.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Core(e) if e.is_numerical() => 2,
            CliError::Core(_) => 1,
            CliError::Io { .. } | CliError::Format { .. } | CliError::Locked(_) => 3,
        }
    }
}
