use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch, {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{op}: {reason}")]
    InvalidShape { op: &'static str, reason: String },

    #[error("class {class} out of range for a model with {num_classes} classes")]
    ClassOutOfRange { class: usize, num_classes: usize },

    #[error("layer {index} ({kind}): {reason}")]
    Layer {
        index: usize,
        kind: String,
        reason: String,
    },

    #[error("trace does not belong to this model: {0}")]
    TraceMismatch(String),

    #[error("ablation-cam undefined: target logit of the full activation stack is exactly zero")]
    ZeroFullLogit,

    #[error(
        "exact enumeration capped at {cap} channels, got {players} ({evaluations} subset evaluations)"
    )]
    OracleCap {
        players: usize,
        cap: usize,
        evaluations: u128,
    },

    #[error("ordering set is empty")]
    EmptyOrderings,

    #[error("invalid ordering: {0}")]
    InvalidOrdering(String),

    #[error("{0}")]
    Metric(String),

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{0}")]
    Invalid(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
