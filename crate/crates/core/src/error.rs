use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("adjacency matrix is not symmetric at ({0}, {1})")]
    NotSymmetric(usize, usize),

    #[error("node {node} out of range for {n} nodes")]
    NodeOutOfRange { node: usize, n: usize },

    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),

    #[error("empty node scope")]
    EmptyScope,

    #[error("grid has no load nodes")]
    NoLoads,

    #[error("node {0} is already removed")]
    NodeAlreadyRemoved(usize),

    #[error("node {0} is not removed")]
    NodeNotRemoved(usize),

    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },

    #[error("overload trip during relaxation at t = {t} on {} line(s)", .lines.len())]
    RelaxationTrip { t: f64, lines: Vec<usize> },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("line {line}: node {node} out of range for {n} nodes")]
    IndexOutOfRange { line: usize, node: usize, n: usize },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
