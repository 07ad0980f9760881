use thiserror::Error;

/// Errors raised by model construction, estimator steps and the oracles.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum DobError {
    #[error("dimension mismatch in {what}: expected {expected:?}, found {found:?}")]
    Dimension {
        what: String,
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("{what} is not symmetric (max asymmetry {asymmetry:.3e})")]
    NotSymmetric { what: String, asymmetry: f64 },

    #[error("{what} is not positive semi-definite (min eigenvalue {min_eigenvalue:.3e})")]
    NotPositiveSemidefinite { what: String, min_eigenvalue: f64 },

    #[error("{what} is not positive definite (min eigenvalue {min_eigenvalue:.3e})")]
    NotPositiveDefinite { what: String, min_eigenvalue: f64 },

    #[error("rank condition violated: rank(H*G) = {rank_hg}, rank(G) = {rank_g}, p = {p}")]
    RankCondition { rank_hg: usize, rank_g: usize, p: usize },

    #[error("innovation covariance is not invertible (condition estimate {condition:.3e})")]
    SingularInnovation { condition: f64 },

    #[error("disturbance unobservable: G'H'R~^-1 H G is singular (condition estimate {condition:.3e})")]
    DisturbanceUnobservable { condition: f64 },

    #[error("cholesky factorization failed after regularization (most negative eigenvalue {min_eigenvalue:.3e})")]
    Factorization { min_eigenvalue: f64 },

    #[error("batch gram matrix is singular (condition estimate {condition:.3e})")]
    SingularGram { condition: f64 },

    #[error("batch problem too large: {steps} steps x state dim {dim} exceeds the cap")]
    BatchTooLarge { steps: usize, dim: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty window")]
    EmptyWindow,
}

pub type Result<T> = std::result::Result<T, DobError>;
