use std::path::PathBuf;

/// Errors surfaced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("initialization failed: {0}")]
    Init(String),

    #[error("scene generation failed: {0}")]
    Generation(String),

    #[error("trajectory does not cover faces {uncovered:?} after {attempts} attempts")]
    Coverage { uncovered: Vec<u32>, attempts: u32 },

    #[error("non-finite gradient for primitive {id}")]
    NonFiniteGradient { id: u64 },

    #[error("non-finite loss {loss} at iteration {iteration} (view {view})")]
    NonFiniteLoss { loss: f64, iteration: u64, view: u32 },

    #[error("checkpoint rejected: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
