use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate distribution: {0}")]
    DegenerateDistribution(String),

    #[error("degenerate weights: {0}")]
    DegenerateWeights(String),

    #[error("undefined mAP: {0}")]
    UndefinedMap(String),

    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },

    #[error("client {client}, round {round}: {source}")]
    Client {
        client: usize,
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_client(self, client: usize, round: usize) -> Self {
        Error::Client {
            client,
            round,
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping client/round context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Client { source, .. } => source.root(),
            other => other,
        }
    }
}
