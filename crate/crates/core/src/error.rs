use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("bad magic at offset {offset}: expected LPDUMP01, found {found:?}")]
    BadMagic { offset: u64, found: [u8; 8] },

    #[error("truncated file at offset {offset}: needed {needed} more bytes")]
    Truncated { offset: u64, needed: u64 },

    #[error("non-finite activation {value} at offset {offset}")]
    NonFiniteActivation { offset: u64, value: f32 },

    #[error("invalid dump: {0}")]
    InvalidDump(String),

    #[error("invalid manifest {path}:{line}: {reason}")]
    Manifest {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("non-finite loss in epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("non-finite gradient for parameter tensor {tensor} at step {step}")]
    NonFiniteGradient { tensor: String, step: u64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("bad probe file: {0}")]
    BadProbeFile(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
