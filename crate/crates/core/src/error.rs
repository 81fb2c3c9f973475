use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AlmaError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("index out of bounds: {0}")]
    Index(String),

    #[error("infeasible matching: {0}")]
    Infeasible(String),

    #[error("connected component has {vertices} vertices, enumeration limit is {limit}; use a smaller desk-scale window")]
    ComponentTooLarge { vertices: usize, limit: usize },

    #[error("instance has no agent with a computable loss")]
    EmptyInstance,

    #[error("sum of optimal welfare is zero")]
    ZeroOptimal,

    #[error("singular chain: back-off probability {0} must lie strictly inside (0, 1)")]
    SingularChain(f64),

    #[error("target set {0:?} is not hit with probability one")]
    UnreachableTarget(Vec<usize>),

    #[error("no saved distance for pair ({0}, {1})")]
    MissingPair(usize, usize),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl AlmaError {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        AlmaError::Parse { line, msg: msg.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AlmaError::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, AlmaError>;
