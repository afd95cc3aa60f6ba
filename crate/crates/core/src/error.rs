use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch ({detail})")]
    Shape { op: &'static str, detail: String },

    #[error("numerical failure in {op}: {detail}")]
    Numerical { op: &'static str, detail: String },

    #[error("matrix is singular within tolerance at pivot {pivot}")]
    Singular { pivot: usize },

    #[error("iteration diverged at step {iter} (norm {norm:e})")]
    Divergence { iter: usize, norm: f64 },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("invalid construction: {0}")]
    Spec(String),

    #[error("embedding too narrow: need width {required}, have {available}")]
    Capacity { required: usize, available: usize },

    #[error("non-finite value at step {step}")]
    NonFinite { step: usize },

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("malformed checkpoint: {0}")]
    Format(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Shape {
        op,
        detail: detail.into(),
    }
}
