use thiserror::Error;

/// Failure modes shared by every module of the crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("out of range: {0}")]
    Range(String),

    #[error("matrix is not positive semidefinite (eigenvalue {eigenvalue:e})")]
    NotPsd { eigenvalue: f64 },

    #[error("matrix is not positive definite (pivot {pivot:e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("quadrature did not converge: {0}")]
    Accuracy(String),

    #[error("controllability failure: {0}")]
    Controllability(String),

    #[error("Sylvester operator is singular: {0}")]
    SpectrumOverlap(String),

    #[error("weight is not monotone: R has eigenvalue {eigenvalue:e}")]
    WeightMonotonicity { eigenvalue: f64 },

    #[error(
        "controllability verdicts disagree: gramian min eigenvalue {gramian_min_eigenvalue:e}, kalman rank {kalman_rank} of {dim}"
    )]
    Conditioning {
        gramian_min_eigenvalue: f64,
        kalman_rank: usize,
        dim: usize,
    },

    #[error("identity residual {residual:e} exceeds limit {limit:e}")]
    Residual { residual: f64, limit: f64 },

    #[error("generator consistency defect {defect:e} exceeds limit {limit:e}")]
    Consistency { defect: f64, limit: f64 },

    #[error("mode error: {0}")]
    Mode(String),

    #[error("nonlinearity rejected: {0}")]
    RejectedNonlinearity(String),

    #[error("outside local basin: state norm {norm:e} at t = {time} exceeds guard {guard:e}")]
    Divergence { time: f64, norm: f64, guard: f64 },

    #[error("step size underflow at t = {time} (h = {step:e})")]
    Stiffness { time: f64, step: f64 },

    #[error("invalid time grid: {0}")]
    Grid(String),

    #[error("audit not applicable: {0}")]
    AuditNotApplicable(String),

    #[error("insufficient data: {samples} samples in window, need at least 10")]
    InsufficientData { samples: usize },

    #[error("static coupling violated at t = {time}: defect {defect:e}")]
    StaticCoupling { time: f64, defect: f64 },

    #[error("inconsistent inputs: {0}")]
    Inconsistent(String),

    #[error("generation failed: {0}")]
    Generation(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
