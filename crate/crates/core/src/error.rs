use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by problem construction, the deterministic solvers and the
/// path simulators.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("dimension mismatch for `{key}`: expected {expected_rows}x{expected_cols}, got {rows}x{cols}")]
    DimensionMismatch {
        key: String,
        expected_rows: usize,
        expected_cols: usize,
        rows: usize,
        cols: usize,
    },

    #[error("`{key}` has {got} samples, expected {expected}")]
    SampleCount {
        key: String,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in `{key}` at knot {knot}")]
    NonFinite { key: String, knot: usize },

    #[error("`{key}` is not symmetric at knot {knot} (asymmetry {asymmetry:e})")]
    NotSymmetric {
        key: String,
        knot: usize,
        asymmetry: f64,
    },

    #[error("`{key}` is not positive definite at knot {knot} (smallest eigenvalue {min_eig:e})")]
    NotPositiveDefinite {
        key: String,
        knot: usize,
        min_eig: f64,
    },

    #[error("`{key}` is singular at knot {knot}")]
    Singular { key: String, knot: usize },

    #[error("eigenvalue sweep of `{key}` failed at knot {knot}")]
    Eigen { key: String, knot: usize },

    #[error("special-case gate rejected the problem; offending coefficients: {}", .0.join(", "))]
    GateViolation(Vec<String>),

    #[error("{stage}: solution blew up near knot {knot} (max-norm {norm:e})")]
    BlowUp {
        stage: &'static str,
        knot: usize,
        norm: f64,
    },

    #[error("time {t} outside [0, {horizon}]")]
    OutOfHorizon { t: f64, horizon: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite simulated state at step {step}")]
    NonFiniteState { step: usize },

    #[error("grid mismatch: expected {expected} knots, got {got}")]
    GridMismatch { expected: usize, got: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("empty ensemble")]
    EmptyEnsemble,
}

pub type Result<T> = core::result::Result<T, Error>;
