//! Log-density expansion, approximate log-likelihood and estimation.

mod fisher;
mod fit;
mod loglik;
mod optim;
mod series;

use thiserror::Error;

use crate::expansion::{ExpansionError, ModelError};

pub use fisher::{asymptotic_stddev, fisher_information, fisher_information_dmrou, fisher_information_mrou};
pub use fit::{fit, maximize, EstimateReport, FitOptions, Maximum, ParamBox, HESSIAN_STEP};
pub use loglik::{approx_loglik, log_density, loglik, LoglikOptions};
pub use optim::{nelder_mead, Minimum, NelderMeadOptions, OptimError};
pub use series::{ObservationSeries, SPACING_TOLERANCE};

pub(crate) use fit::finish;
pub(crate) use loglik::sum_transitions;

#[derive(Debug, Error)]
pub enum LikelihoodError {
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Expansion(#[from] ExpansionError),
    #[error("transition {index}: {source}")]
    Transition {
        index: usize,
        source: Box<LikelihoodError>,
    },
    #[error("invalid start: {0}")]
    InvalidStart(String),
    #[error(transparent)]
    Optimizer(#[from] OptimError),
    #[error("optimizer did not converge after {} iterations", report.iterations)]
    NotConverged { report: Box<EstimateReport> },
    #[error("parameters are not stationary: {0}")]
    NonStationary(String),
}

impl From<ModelError> for LikelihoodError {
    fn from(e: ModelError) -> Self {
        LikelihoodError::Expansion(e.into())
    }
}
