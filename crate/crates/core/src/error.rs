//! Error type shared across the crate.

use std::fmt;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, SimError>;

/// Failure modes of construction, simulation, and I/O.
#[derive(Debug)]
pub enum SimError {
    /// A parameter violates a documented precondition.
    InvalidParameter(String),
    /// The quadrature grid is too coarse to resolve an oscillatory integrand.
    QuadratureGuard {
        epsilon: f64,
        points_per_cell: f64,
        required: f64,
    },
    /// A field or coefficient vector has the wrong length.
    ShapeMismatch { expected: usize, actual: usize },
    /// A non-finite value appeared during time stepping.
    NonFinite { step: usize, what: String },
    /// The implicit linear solve failed.
    LinearSolve { detail: String, condition_estimate: f64 },
    /// The Picard inner iteration did not converge; residual history attached.
    PicardNoConverge { residuals: Vec<f64> },
    /// A simulation path aborted; the path index is preserved for diagnosis.
    PathFailed { path: usize, message: String },
    /// Configuration file problems (syntax or semantic).
    Config(String),
    Io(std::io::Error),
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimError::InvalidParameter(msg) => write!(f, "invalid parameter: {msg}"),
            SimError::QuadratureGuard {
                epsilon,
                points_per_cell,
                required,
            } => write!(
                f,
                "quadrature guard: {points_per_cell:.2} grid points per epsilon-cell \
                 (epsilon = {epsilon}), need at least {required}"
            ),
            SimError::ShapeMismatch { expected, actual } => {
                write!(f, "shape mismatch: expected length {expected}, got {actual}")
            }
            SimError::NonFinite { step, what } => {
                write!(f, "non-finite value in {what} at step {step}")
            }
            SimError::LinearSolve {
                detail,
                condition_estimate,
            } => write!(
                f,
                "linear solve failed: {detail} (condition estimate {condition_estimate:.3e})"
            ),
            SimError::PicardNoConverge { residuals } => write!(
                f,
                "Picard iteration did not converge after {} sweeps (last residual {:.3e})",
                residuals.len(),
                residuals.last().copied().unwrap_or(f64::NAN)
            ),
            SimError::PathFailed { path, message } => {
                write!(f, "path {path} failed: {message}")
            }
            SimError::Config(msg) => write!(f, "config error: {msg}"),
            SimError::Io(err) => write!(f, "io error: {err}"),
        }
    }
}

impl std::error::Error for SimError {}

impl From<std::io::Error> for SimError {
    fn from(err: std::io::Error) -> Self {
        SimError::Io(err)
    }
}
