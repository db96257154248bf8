use std::path::PathBuf;

use crate::citygraph::{Action, Location, NodeId};

pub type Result<T, E = NavError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum NavError {
    #[error("invalid grid spec: {0}")]
    InvalidSpec(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("node {0} is not in the graph")]
    UnknownNode(NodeId),
    #[error("action {action:?} is not available at node {node}")]
    UnavailableAction { node: NodeId, action: Action },
    #[error("location ({}, {}) hosts no graph node", .0.x, .0.y)]
    UnpopulatedLocation(Location),
    #[error("no path from {start} to any goal location")]
    NoPath { start: NodeId },
    #[error("requested {requested} destinations per class but only {available} populated locations exist")]
    TooManyDestinations { requested: usize, available: usize },
    #[error("empty input: {0}")]
    Empty(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("head mismatch: expected {expected}, got {got}")]
    HeadMismatch { expected: String, got: String },
    #[error("no start candidates in the sampling band for destination(s) {0:?}")]
    EmptyBand(Vec<Location>),
    #[error("config hash mismatch for {path}: file has {found}, config expects {expected}")]
    HashMismatch { path: PathBuf, found: String, expected: String },
    #[error("malformed {what}: {detail}")]
    Malformed { what: String, detail: String },
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl NavError {
    pub fn malformed(what: impl Into<String>, detail: impl ToString) -> Self {
        NavError::Malformed { what: what.into(), detail: detail.to_string() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        NavError::Io { path: path.into(), source }
    }
}
