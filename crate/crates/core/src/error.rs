use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("eigen/singular decomposition did not converge for a {rows}x{cols} matrix")]
    NonConvergence { rows: usize, cols: usize },

    #[error(
        "matrix is not positive semi-definite: smallest eigenvalue {min_eigenvalue:e} below threshold {threshold:e}"
    )]
    NotPsd { min_eigenvalue: f64, threshold: f64 },

    #[error("sqrt derivative undefined at singular point (smallest eigenvalue {min_eigenvalue:e})")]
    SingularSqrtDerivative { min_eigenvalue: f64 },

    #[error("invalid bandwidth plan: {0}")]
    InvalidPlan(String),

    #[error("series too short for M windows: M*N = {needed} > T = {available}")]
    SeriesTooShort { needed: usize, available: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate spectral mass: the estimate is identically zero")]
    DegenerateSpectralMass,

    #[error("rank-deficient marginal spectrum at order {d}")]
    RankDeficientMarginal { d: usize },

    #[error("sequential paths do not share the same eta grid")]
    GridMismatch,

    #[error("degenerate order statistic at d = {d}: V = 0 and estimate equals the threshold")]
    DegenerateOrderStatistic { d: usize },

    #[error("self-normalizer matrix is singular (condition number {condition:e}); the limit matrix is assumed positive definite")]
    SingularSelfNormalizer { condition: f64 },

    #[error("unstable autoregressive coefficient: operator norm {norm} exceeds 0.95")]
    Unstable { norm: f64 },

    #[error("quantile level {0} is not tabulated")]
    MissingQuantile(f64),

    #[error("quantile cache: {0}")]
    Cache(String),
}

pub type Result<T> = std::result::Result<T, Error>;
