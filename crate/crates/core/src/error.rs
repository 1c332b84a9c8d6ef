use thiserror::Error;

use crate::graph::NodeId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("graph contains a directed cycle through edge {from}>{to}")]
    Cycle { from: NodeId, to: NodeId },

    #[error("self-edge on node {0}")]
    SelfEdge(NodeId),

    #[error("node {node} is out of range (graph has {count} nodes)")]
    InvalidNode { node: NodeId, count: usize },

    #[error("graph already carries the virtual root")]
    RootPresent,

    #[error("malformed graph literal: {0}")]
    GraphLiteral(String),

    #[error("dimension mismatch on node {node}: expected {expected}, got {got}")]
    DimensionMismatch { node: NodeId, expected: usize, got: usize },

    #[error("node {node} cannot be initialized: ancestor {ancestor} is unassigned")]
    MissingAncestor { node: NodeId, ancestor: NodeId },

    #[error("no FAVI Jacobian for pair child={child}, ancestor={ancestor}")]
    InvalidPair { child: NodeId, ancestor: NodeId },

    #[error("non-finite {what} at event {event}")]
    NonFinite { what: &'static str, event: usize },

    #[error("recursion depth {depth} exceeds node count {limit}")]
    RecursionDepth { depth: usize, limit: usize },

    #[error("guard violated: {0}")]
    Guard(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    /// True for failures caused by the numerics of a run rather than its inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite { .. })
    }
}
