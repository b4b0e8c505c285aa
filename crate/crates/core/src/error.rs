use thiserror::Error;

/// Errors raised by the numerical routines and model constructors.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("{0} must be square")]
    NotSquare(&'static str),

    #[error("{name} contains a non-finite entry")]
    NonFinite { name: &'static str },

    #[error("{0} must be symmetric")]
    NotSymmetric(&'static str),

    #[error("{0} must be positive semidefinite")]
    NotPositiveSemidefinite(&'static str),

    #[error("{0} must be positive definite")]
    NotPositiveDefinite(&'static str),

    #[error("matrix not stable: spectral radius {radius} exceeds 1 - {margin}")]
    NotStable { radius: f64, margin: f64 },

    #[error("pair (A, C) not observable")]
    NotObservable,

    #[error("pair (A, B) not controllable")]
    NotControllable,

    /// A stabilizing controller needs both A - LC and A + BK stable.
    #[error(
        "gain {gain} not stabilizing: spectral radius of {matrix} is {radius} \
         (stabilizing gains require A - LC and A + BK stable)"
    )]
    NotStabilizing {
        gain: &'static str,
        matrix: &'static str,
        radius: f64,
    },

    #[error("{0} gain required but absent")]
    MissingGain(&'static str),

    #[error("DARE divergence: no convergence after {iterations} iterations")]
    DareDivergence { iterations: usize },

    #[error("Lyapunov series did not converge after {doublings} doublings")]
    LyapunovDivergence { doublings: usize },

    #[error("eigenvalue iteration failed to converge")]
    EigenFailure,

    #[error("matrix is singular")]
    Singular,

    #[error("beta bound overflow: log(beta) = {log_beta}")]
    BetaOverflow { log_beta: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("recursion residual {residual:e} at step {step} exceeds tolerance {tolerance:e}")]
    ResidualViolation {
        step: usize,
        residual: f64,
        tolerance: f64,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
