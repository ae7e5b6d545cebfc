use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected} values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("grid mismatch between operands")]
    GridMismatch,

    #[error("invalid stratification: rho2 ({rho2}) must exceed rho1 ({rho1})")]
    Stratification { rho1: f64, rho2: f64 },

    #[error("noise covariance has divergent trace (decay exponent {s} <= 1 with unbounded mode count)")]
    DivergentTrace { s: f64 },

    #[error("control or increment has support outside the retained noise modes (layer {layer}, mode index {index})")]
    OutsideCameronMartin { layer: usize, index: usize },

    #[error("non-finite state encountered at step {step}")]
    NonFinite { step: usize },

    #[error("empty trajectory")]
    EmptyTrajectory,

    #[error("malformed snapshot: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
