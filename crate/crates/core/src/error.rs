use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised anywhere in the pipeline. [`Error::exit_code`] maps each
/// variant onto the command-line exit-code table.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("no word reaches min_count {min_count}; vocabulary is empty")]
    EmptyVocabulary { min_count: usize },
    #[error("cannot balance training set: {positives} positive and {negatives} negative weak labels")]
    UnsatisfiableBalance { positives: usize, negatives: usize },
    #[error("parity error: artifacts were produced by code version {stored}, running {expected}")]
    Parity { stored: String, expected: String },
    #[error("integrity error: artifact {name}: {reason}")]
    Integrity { name: String, reason: String },
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Divergence { epoch: usize, loss: f64 },
    #[error("{0}")]
    Runtime(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Nn(#[from] txclass_nn::NnError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 config, 3 data, 4 parity/integrity, 5 runtime.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::EmptyVocabulary { .. } | Error::UnsatisfiableBalance { .. } => 3,
            Error::Parity { .. } | Error::Integrity { .. } => 4,
            Error::Divergence { .. } | Error::Runtime(_) | Error::Io { .. } | Error::Nn(_) => 5,
        }
    }
}
