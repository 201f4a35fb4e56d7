use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes that cannot be combined by the requested op.
    #[error("shape error: {0}")]
    Shape(String),

    /// A layer, model or training configuration that violates its contract.
    #[error("configuration error: {0}")]
    Config(String),

    /// An op was invoked in a state its contract forbids (e.g. folding a
    /// train-mode normalization).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Non-finite values surfaced during a forward pass or training step.
    #[error("non-finite values first produced by `{layer}`: {detail}")]
    NonFinite { layer: String, detail: String },

    #[error("checkpoint fingerprint mismatch: file has {found}, model expects {expected}")]
    Fingerprint { expected: String, found: String },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
