//! Error type shared by the whole toolkit.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CbleError>;

#[derive(Debug, Clone, Error)]
pub enum CbleError {
    /// A Laplace-exponent style evaluation was requested outside the
    /// exponential-moment domain of the environment.
    #[error("theta = {theta} outside the exponential-moment domain ({lo}, {hi})")]
    MomentDomain { theta: f64, lo: f64, hi: f64 },

    /// The Esscher reweighting of a jump law leaves the supported
    /// parametric families.
    #[error("unsupported Esscher tilt: {0}")]
    UnsupportedTilt(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The branching mechanism is degenerate (`ψ₀ ≡ 0`) or otherwise
    /// unusable for the requested operation.
    #[error("degenerate mechanism: {0}")]
    DegenerateMechanism(String),

    /// A named hypothesis (H1..H4) or regime precondition failed.
    #[error("hypothesis {hypothesis} not satisfied: {detail}")]
    Hypothesis {
        hypothesis: &'static str,
        detail: String,
    },

    /// The backward ODE integrator could not meet its tolerance.
    #[error("cumulant solver failure: {detail} (steps={steps}, rejected={rejected})")]
    SolverFailure {
        detail: String,
        steps: usize,
        rejected: usize,
    },

    /// The solution left the positive cone, violating the solver contract.
    #[error("cumulant solver contract violation: {0}")]
    ContractViolation(String),

    /// The doubling limit for `λ → ∞` did not stabilise.
    #[error("lambda-limit failure after {doublings} doublings (last value {last})")]
    LimitFailure { doublings: usize, last: f64 },

    /// A horizon-truncated functional showed no sign of convergence.
    #[error("truncation failure: {0}")]
    TruncationFailure(String),

    /// The outer integral of a constant estimator is not visibly integrable
    /// within the quadrature budget; carries the partial sums.
    #[error("integrability warning: fitted tail exponent {exponent}, partial sum {partial}")]
    IntegrabilityWarning { exponent: f64, partial: f64 },

    /// Rejection conditioning accepted too few paths to report anything.
    #[error("insufficient conditioned paths: accepted {accepted} of {total} (floor {floor})")]
    InsufficientPaths {
        accepted: usize,
        total: usize,
        floor: usize,
    },

    #[error("numerical error: {0}")]
    Numerical(String),
}
