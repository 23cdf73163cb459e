//! Error type shared by every module in the crate.

use thiserror::Error;

/// Errors raised by the laboratory.
///
/// `HypothesisViolation` is reserved for violations of a theorem's stated
/// hypotheses (e.g. a non-centered measure); it is distinct from an
/// inequality failing, which the reports carry as data, never as an error.
#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("hypothesis violated: {0}")]
    HypothesisViolation(String),

    #[error("accuracy failure in {what}: achieved {achieved:.3e}, required {required:.3e}")]
    AccuracyFailure {
        what: String,
        achieved: f64,
        required: f64,
    },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("time {0} is not a grid node")]
    OffGridTime(f64),

    #[error("unsupported integrand kind: {0}")]
    UnsupportedKind(String),

    #[error("regression basis degenerate: condition number {condition:.3e}")]
    BasisDegeneracy { condition: f64 },

    #[error("instance size {size} exceeds solver cap {cap}")]
    SizeCapExceeded { size: usize, cap: usize },

    #[error("solver did not converge: residual {residual:.3e}")]
    NonConvergence { residual: f64 },

    #[error("marginal mismatch for {which}: observed {observed:.6e}, target {target:.6e}")]
    MarginalMismatch {
        which: String,
        observed: f64,
        target: f64,
    },

    #[error("overflow guard: {0}")]
    OverflowGuard(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;
