use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum IramError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("empty input to {0}")]
    EmptyInput(&'static str),

    #[error("softmax mask leaves no position unmasked")]
    DegenerateMask,

    #[error("backward requires a scalar loss, got shape {0:?}")]
    Rank(Vec<usize>),

    #[error("loss is not connected to any tensor that requires a gradient")]
    Disconnected,

    #[error("backward was already run on this tape")]
    BackwardTwice,

    #[error("non-finite value in {0}")]
    NumericFault(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl IramError {
    pub(crate) fn dim(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        IramError::Dimension {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        IramError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        IramError::Json {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, IramError>;
