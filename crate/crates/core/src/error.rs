//! Crate-wide error type.

use std::path::PathBuf;

use crate::behavior::BehaviorError;
use crate::world::{DecodeError, WorldError};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Behavior(#[from] BehaviorError),
    #[error("invalid preferences: {0}")]
    Preferences(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("generation failed: {0}")]
    Generation(String),
    #[error("usage: {0}")]
    Usage(String),
    #[error("codebook version {found} does not match {expected}")]
    CodebookMismatch { expected: u32, found: u32 },
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("transition inconsistency at step {step} of {path}: {reason}")]
    TransitionMismatch { path: PathBuf, step: usize, reason: String },
    #[error("malformed data in {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
    #[error("llm response: {0}")]
    Parse(String),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
