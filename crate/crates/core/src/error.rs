use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value produced by layer {layer}")]
    NonFinite { layer: usize },

    #[error("malformed weight file: {0}")]
    MalformedWeights(String),

    #[error("weight file layer {layer} expects input width {expected} but the previous layer produces {actual}")]
    InconsistentLayers {
        layer: usize,
        expected: usize,
        actual: usize,
    },

    #[error("unsupported activation code {0}")]
    UnsupportedActivation(u8),

    #[error("weight file checksum mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    ChecksumMismatch { stored: u64, computed: u64 },

    #[error("malformed observation file: {0}")]
    MalformedObservation(String),

    #[error("activation {0} is not piecewise linear with two pieces")]
    NotPiecewiseLinear(&'static str),

    #[error("all {0} restarts produced a non-finite loss")]
    AllRestartsAborted(usize),

    #[error("all {0} sampled pairs were degenerate")]
    DegeneratePairs(usize),

    #[error("region enumeration budget exceeded: k = {k}, c = {c} (limit k <= 4, c <= 12)")]
    BudgetExceeded { k: usize, c: usize },

    #[error("ground truth is required for this check")]
    MissingTruth,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image decode failed for {path}: {message}")]
    Image { path: PathBuf, message: String },

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

    pub(crate) fn dims(context: &'static str, expected: usize, actual: usize) -> Self {
        Error::DimensionMismatch {
            context,
            expected,
            actual,
        }
    }
}
