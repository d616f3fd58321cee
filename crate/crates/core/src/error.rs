use crate::hierarchy::NodeId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("node {0} is not part of the tree")]
    UnknownNode(NodeId),
    #[error("the root must be node 1 and must not have a parent")]
    BadRoot,
    #[error("cycle detected through node {0}")]
    Cycle(NodeId),
    #[error("internal node {0} has a single child; internal nodes need at least two")]
    SingleChild(NodeId),
    #[error("node {0} is not connected to the root")]
    Disconnected(NodeId),
    #[error("a tree needs at least two action nodes")]
    TooFewLeaves,
    #[error("node {0} is not an action node")]
    NotALeaf(NodeId),
    #[error("invalid prior: {0}")]
    InvalidPrior(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("matrix is numerically singular (condition number {0:.3e})")]
    IllConditioned(f64),
    #[error("a message needs at least one child")]
    EmptyChildren,
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
