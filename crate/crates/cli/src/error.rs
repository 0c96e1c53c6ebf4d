use std::path::PathBuf;

use mlv_core::format::FormatError;
use mlv_core::MlvError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: line {line}: {message}")]
    Config {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}: {message}")]
    ConfigFile { path: String, message: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Latent {
        path: PathBuf,
        #[source]
        source: FormatError,
    },
    #[error("{}: malformed metrics file: {message}", path.display())]
    Metrics { path: PathBuf, message: String },
    #[error("edit failed: {0}")]
    Engine(#[from] MlvError),
}

impl CliError {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
