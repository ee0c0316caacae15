use std::path::PathBuf;

use thiserror::Error;

/// Failures of a CLI invocation, each mapped to a stable process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("numerical fault: {0}")]
    Numerical(#[from] gpfl_core::Error),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub const EXIT_CONFIG: i32 = 2;
    pub const EXIT_NUMERICAL: i32 = 3;
    pub const EXIT_IO: i32 = 4;

    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => Self::EXIT_CONFIG,
            CliError::Numerical(_) => Self::EXIT_NUMERICAL,
            CliError::Io { .. } => Self::EXIT_IO,
        }
    }
}
