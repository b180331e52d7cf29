use nalgebra::DMatrix;
use thiserror::Error;

/// Diagnostics attached to an iterative solver that ran out of iterations.
#[derive(Debug, Clone)]
pub struct NonConvergence {
    pub context: String,
    pub iterations: usize,
    /// Last observed convergence measure (stationarity residual or utility change).
    pub residual: f64,
    /// Objective values of the best (or last) iterate, one per player.
    pub objective: Vec<f64>,
    /// The best (or last) iterate itself.
    pub iterate: Vec<DMatrix<f64>>,
    /// Largest utility swings over the trailing window; nonzero entries point at oscillation.
    pub oscillation: Vec<f64>,
}

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid covariance: {0}")]
    InvalidCovariance(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("no convergence in {context} after {iterations} iterations (residual {residual:e})", context = .0.context, iterations = .0.iterations, residual = .0.residual)]
    NonConvergence(Box<NonConvergence>),
    #[error("partition {partition}: {source}")]
    InPartition {
        partition: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// True for errors caused by bad input rather than numerical trouble.
    pub fn is_user_error(&self) -> bool {
        match self {
            Error::InvalidArgument(_) | Error::InvalidCovariance(_) => true,
            Error::NumericalFailure(_) | Error::NonConvergence(_) => false,
            Error::InPartition { source, .. } => source.is_user_error(),
        }
    }

    pub(crate) fn in_partition(self, partition: impl ToString) -> Error {
        Error::InPartition {
            partition: partition.to_string(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
