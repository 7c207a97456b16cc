use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("node {node} out of range for graph with {num_nodes} nodes")]
    InvalidNode { node: usize, num_nodes: usize },

    #[error("self-loop on node {0} is not allowed")]
    SelfLoop(usize),

    #[error("negative or non-finite edge weight {weight} on ({u}, {v})")]
    BadWeight { u: usize, v: usize, weight: f64 },

    #[error("feature matrix has {rows} rows but graph has {num_nodes} nodes")]
    FeatureRows { rows: usize, num_nodes: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("operation requires a non-empty graph")]
    EmptyGraph,

    #[error("class {class} has {count} members, fewer than the {k} folds requested")]
    ClassTooSmall { class: usize, count: usize, k: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("failed to load dataset from {path}: {msg}")]
    Load { path: PathBuf, msg: String },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
