use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the clustering pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {}", format_violations(.0))]
    Config(Vec<Violation>),

    #[error("numeric degeneracy: {0}")]
    NumericDegeneracy(String),

    #[error("training diverged: non-finite {term} at step {step}")]
    Divergence { term: String, step: u64 },

    #[error("dataset not found: {0}")]
    DatasetNotFound(PathBuf),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("ground truth required for eval")]
    MissingLabels,

    #[error("checkpoint checksum mismatch (file truncated or corrupt)")]
    Checksum,

    #[error("checkpoint incompatible: {0}")]
    Incompatible(String),

    #[error("image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// One failed configuration constraint.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|v| format!("{}: {}", v.field, v.message)).collect::<Vec<_>>().join("; ")
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
