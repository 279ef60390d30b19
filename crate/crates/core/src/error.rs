use num_complex::Complex64;
use thiserror::Error;

/// Errors produced by the shrinkage library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite integrand at {at}")]
    NonFiniteIntegrand { at: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("fixed point did not converge at z = {z} after {iterations} iterations (best residual {best_residual:e})")]
    NotConverged {
        z: Complex64,
        iterations: usize,
        best_residual: f64,
    },

    #[error("boundary continuation failed at lambda = {lambda}, stage {stage} (eta = {eta:e}): {source}")]
    BoundaryStage {
        lambda: f64,
        stage: usize,
        eta: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("singular kernel: {0}")]
    Singular(String),

    #[error("degenerate kernel at lambda = {lambda}")]
    DegenerateKernel { lambda: f64 },

    #[error("requires c < 1, got c = {0}")]
    RequiresSubunitRatio(f64),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("eigendecomposition failed")]
    Eigen,

    #[error("zero denominator: {0}")]
    ZeroDenominator(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// True for failures of the numerical machinery, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotConverged { .. }
                | Error::BoundaryStage { .. }
                | Error::Singular(_)
                | Error::DegenerateKernel { .. }
                | Error::Eigen
                | Error::ZeroDenominator(_)
                | Error::NonFiniteIntegrand { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
