use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("matrix is not positive definite (min eigenvalue {min_eig:e})")]
    NotPositiveDefinite { min_eig: f64 },

    #[error("numerical consistency check failed: {0}")]
    Numerical(String),

    #[error("filter is not strictly stable (spectral radius {0})")]
    Unstable(f64),

    #[error("pair (A, B) is not reachable (rank {rank} < {n})")]
    Unreachable { rank: usize, n: usize },

    #[error("complex pole {re}{im:+}j has no conjugate partner; A would not be real")]
    UnpairedPole { re: f64, im: f64 },

    #[error("resolvent (e^(j{theta})I - A) is near-singular (condition number {cond:e})")]
    NearInstability { theta: f64, cond: f64 },

    #[error("shaping filter is not minimum phase on the grid (|det W| = {det:e} at theta = {theta})")]
    NotMinimumPhase { det: f64, theta: f64 },

    #[error(
        "correlogram is not positive (min eigenvalue {min_eig:e} at theta = {theta}); \
         use a Bartlett window, a longer record, or a smaller max lag"
    )]
    NonPositiveCorrelogram { min_eig: f64, theta: f64 },

    #[error("the Alpha family is only defined for scalar spectra (m = 1), got m = {0}")]
    ScalarOnly(usize),

    #[error("dual variable is infeasible (certificate min eigenvalue {margin:e} at theta = {theta})")]
    Infeasible { margin: f64, theta: f64 },

    #[error("covariance estimate is singular (min eigenvalue {min_eig:e}); refusing to solve")]
    SingularCovariance { min_eig: f64 },

    #[error(
        "correlogram condition violated: |int G Omega G* - Sigma| / |Sigma| = {residual:e}; \
         the dual/divergence equivalence requires Sigma to be computed from Omega"
    )]
    CorrelogramMismatch { residual: f64 },

    #[error("spectral factorization failed: {0}")]
    Factorization(String),

    #[error("Toeplitz matrix of covariance lags is singular at order {0}")]
    DegenerateToeplitz(usize),

    #[error("divergence is negative ({0:e}) beyond quadrature tolerance")]
    NegativeDivergence(f64),
}
