use std::path::PathBuf;

/// Errors raised anywhere in the engine, the networks, training and I/O.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("{op}: non-finite value at flat index {index}")]
    NonFinite { op: &'static str, index: usize },

    #[error("log: non-positive argument {value} at flat index {index}")]
    LogDomain { index: usize, value: f64 },

    #[error("backward: root must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("sharing: layer `{layer}` has shape {lhs:?} in one network and {rhs:?} in the other")]
    SharingShape {
        layer: String,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("mask has no foreground pixels")]
    NoForeground,

    #[error("format error at byte offset {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("checkpoint entry `{name}`: {msg}")]
    CheckpointMismatch { name: String, msg: String },

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidArgument { op, msg: msg.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
