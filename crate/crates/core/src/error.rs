use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("file size {size} is not a multiple of {required}")]
    Divisibility { size: u64, required: u64 },

    #[error("length {len} is not divisible into {parts} equal parts")]
    Alignment { len: u64, parts: u64 },

    #[error("cannot remove a node from {nodes} nodes at replication {replication}")]
    InfeasibleRemoval { nodes: usize, replication: usize },

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("transport: {0}")]
    Transport(String),

    #[error("scenario field `{field}`: {reason}")]
    Scenario { field: &'static str, reason: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
