use std::path::PathBuf;

use crate::topology::NodeId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("union of an empty digraph sequence is undefined")]
    EmptyUnion,

    #[error("edge {from}->{to} is invalid: {reason}")]
    InvalidEdge {
        from: NodeId,
        to: NodeId,
        reason: &'static str,
    },

    #[error("node sets differ inside the window at step {step}")]
    NodeSetMismatch { step: usize },

    #[error("window [{start}, {end}] exceeds horizon {horizon}")]
    WindowOutOfRange {
        start: usize,
        end: usize,
        horizon: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid schedule at step {step}: {reason}")]
    InvalidSchedule { step: usize, reason: String },

    #[error("no topology satisfies the departure condition at step {step} for node {node}")]
    ImpossibleTopology { step: usize, node: NodeId },

    #[error("gave up generating a topology for step {step} after {attempts} attempts")]
    GenerationExhausted { step: usize, attempts: usize },

    #[error("departing node has no qualifying out-neighbor")]
    DepartureConditionViolated,

    #[error("node {node} re-activated without any recorded state update")]
    ReactivationWithoutHistory { node: NodeId },

    #[error("node {node} belongs to more than one operating set at step {step}")]
    ScheduleCorruption { step: usize, node: NodeId },

    #[error("message to node {node} delivered at step {step} while it is inactive")]
    InactiveReceiver { step: usize, node: NodeId },

    #[error("average over an empty node set")]
    EmptyNodeSet,

    #[error("runs have mixed horizons ({expected} vs {found})")]
    MixedHorizons { expected: usize, found: usize },

    #[error("aggregation needs at least one run")]
    EmptyRunList,

    #[error("unknown preset {name:?}; known presets: {known}")]
    UnknownPreset { name: String, known: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
