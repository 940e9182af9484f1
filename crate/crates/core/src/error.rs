use std::path::PathBuf;

use crate::federation::ProtocolError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimensionMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("unsupported channel count {0}")]
    UnsupportedChannels(usize),

    #[error("empty image")]
    EmptyImage,

    #[error("failed to decode {path}: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("parameter error: {0}")]
    Params(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("no matching pairs in {0}")]
    NoMatchingPairs(PathBuf),

    #[error("non-finite value during training: {0}")]
    NonFinite(String),

    #[error(transparent)]
    Protocol(#[from] ProtocolError),

    #[error("federation: {0}")]
    Federation(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(source: std::io::Error) -> Self {
        Error::Io {
            context: "i/o".into(),
            source,
        }
    }
}
