use thiserror::Error;

/// Errors raised anywhere in the core crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid shape {shape:?} for {op}: {reason}")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: &'static str,
    },
    #[error("{op}: argument outside domain ({detail})")]
    Domain { op: &'static str, detail: String },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("row {row} has norm {norm:e}, below the normalization floor")]
    DegenerateNorm { row: usize, norm: f64 },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("tensors belong to different graphs")]
    GraphMismatch,
    #[error("batch size {0} too small: at least 2 samples are required")]
    BatchTooSmall(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Invalid(String),
    #[error("training aborted at epoch {epoch}, step {step}: {detail}")]
    TrainingAbort {
        epoch: usize,
        step: usize,
        detail: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
