use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DhaError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: image codec error: {msg}")]
    Image { path: PathBuf, msg: String },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("missing required file {0}")]
    Missing(PathBuf),
    #[error("config key `{key}`: {msg}")]
    Config { key: String, msg: String },
    #[error("non-finite {what} at iteration {iteration}")]
    Diverged { what: String, iteration: usize },
    #[error("config hash mismatch: expected {expected}, found {found} in {path}")]
    HashMismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error(transparent)]
    Nn(#[from] dha_nn::NnError),
}

pub type Result<T, E = DhaError> = std::result::Result<T, E>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(DhaError::Invalid(msg.into()))
}

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| DhaError::Io {
            path: path.into(),
            source,
        })
    }
}
