use std::path::PathBuf;

/// Errors raised by the translation stack.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Input violates an operation's precondition (shape, range, dimension).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A configuration value cannot be honoured (rank too large, not enough cases, ...).
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A numerical quantity became non-finite or left its admissible range.
    #[error("numerical fault: {0}")]
    Numerical(String),

    /// Training produced a non-finite loss.
    #[error("training fault: {0}")]
    Training(String),

    /// A pipeline stage failed; carries the stage tag for diagnostics.
    #[error("stage `{stage}` failed: {message}")]
    Stage { stage: &'static str, message: String },

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error at {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }
}
