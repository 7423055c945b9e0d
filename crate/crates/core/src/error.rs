use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}:{line}: malformed manifest record: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("pair {pair_id}: {msg}")]
    Validation { pair_id: String, msg: String },

    #[error("path {path} is claimed by anchors {first} and {second}")]
    Ambiguous {
        path: PathBuf,
        first: String,
        second: String,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("non-finite values produced by {layer}")]
    NonFinite { layer: String },

    #[error("cannot decode image {path}: {msg}")]
    Decode { path: PathBuf, msg: String },

    #[error("resource unavailable: {0}")]
    Resource(String),

    #[error("embedding provider broke its contract: {0}")]
    Contract(String),

    #[error("embedding {index} is not unit-norm (norm {norm})")]
    NotNormalized { index: usize, norm: f64 },

    #[error("loss is undefined: no anchor in the batch has a positive")]
    UndefinedLoss,

    #[error(
        "training diverged at epoch {epoch}, step {step} (lr {lr}): non-finite loss on batch [{batch}]"
    )]
    Diverged {
        epoch: usize,
        step: usize,
        lr: f64,
        batch: String,
    },

    #[error("incompatible {what} version {found} (this build reads version {expected})")]
    Incompatible {
        what: &'static str,
        found: u32,
        expected: u32,
    },

    #[error("integrity check failed: {0}")]
    Integrity(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("stale index: built by model {index}, queried with model {model}")]
    StaleIndex { index: String, model: String },

    #[error("index is empty")]
    EmptyIndex,

    #[error("duplicate artwork id {0}")]
    DuplicateId(String),

    #[error("region {0} lies outside the image")]
    RegionOutOfBounds(String),

    #[error("region {0} is too small for the edge representation")]
    DegenerateRegion(String),

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

impl Error {
    /// Process exit code for this failure: 1 for bad input or configuration,
    /// 2 for failures that happen while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. }
            | Error::Validation { .. }
            | Error::Ambiguous { .. }
            | Error::InsufficientData(_)
            | Error::Config(_)
            | Error::Shape(_)
            | Error::DimensionMismatch { .. }
            | Error::StaleIndex { .. }
            | Error::DuplicateId(_)
            | Error::RegionOutOfBounds(_)
            | Error::DegenerateRegion(_)
            | Error::Calibration(_)
            | Error::Incompatible { .. } => 1,
            _ => 2,
        }
    }
}
