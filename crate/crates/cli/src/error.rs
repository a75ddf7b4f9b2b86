use std::path::PathBuf;

use flagfed_core::Error as CoreError;
use thiserror::Error;

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

/// Process exit codes.
pub mod exit {
    pub const OTHER: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const INTEGRITY: i32 = 3;
    pub const DIVERGENCE: i32 = 4;
    pub const IO: i32 = 5;
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::Io { .. } | CliError::Csv { .. } => exit::IO,
            CliError::Core(e) => match e.root() {
                CoreError::Config(_) | CoreError::Dimension(_) | CoreError::Domain(_) => exit::CONFIG,
                CoreError::Parse { .. } | CoreError::Integrity(_) => exit::INTEGRITY,
                CoreError::Divergence { .. } => exit::DIVERGENCE,
                CoreError::Io { .. } => exit::IO,
                _ => exit::OTHER,
            },
        }
    }
}
