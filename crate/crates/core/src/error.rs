//! Error type shared by every module of the crate.

use std::path::PathBuf;

use thiserror::Error;

use crate::training::ExperimentRecord;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A matrix, vector or mask did not have the expected shape.
    #[error("shape mismatch at {location}: {detail}")]
    Shape { location: String, detail: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("class index {index} out of range for {classes} classes")]
    ClassOutOfRange { index: usize, classes: usize },

    #[error("class indices must differ (both {0})")]
    SameClass(usize),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// Training produced a non-finite loss. The record holds every epoch completed before the failure.
    #[error("training diverged at epoch {epoch}")]
    Diverged {
        epoch: usize,
        record: Box<ExperimentRecord>,
    },

    #[error("pruning infeasible: {0}")]
    Pruning(String),

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("corrupted checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("idx format error: {0}")]
    Idx(String),

    #[error("dimension {dim} too large for exhaustive grid check (max 3)")]
    GridDimension { dim: usize },

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("io error on {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn shape(location: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Shape {
            location: location.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
