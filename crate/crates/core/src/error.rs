use std::path::PathBuf;

use crate::model::NodeId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error(
        "Gibbs kernel underflow on edge {edge} at epsilon = {epsilon}: \
         enable cost normalization or increase epsilon"
    )]
    KernelUnderflow { edge: String, epsilon: f64 },

    #[error("dense tensor would hold {entries} entries, above the cap of {cap}")]
    SizeCap { entries: u128, cap: usize },

    #[error("{operation} requires a {expected} structure, got {found}")]
    WrongStructure {
        operation: &'static str,
        expected: &'static str,
        found: &'static str,
    },

    #[error("node {0} is not in the index set")]
    UnknownNode(NodeId),

    #[error("unsupported bimarginal pair {0} x {1}")]
    UnsupportedPair(NodeId, NodeId),

    #[error("out of range: {0}")]
    OutOfRange(String),

    #[error("no runs found in {0}")]
    NoRuns(PathBuf),

    #[error("{file}:{line}: {message}")]
    Profile {
        file: PathBuf,
        line: u64,
        message: String,
    },

    #[error("transport problem is infeasible: {0}")]
    Infeasible(String),

    #[error("internal invariant violated: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
