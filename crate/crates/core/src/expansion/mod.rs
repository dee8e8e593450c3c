//! Closed-form transition density expansions.

mod density;
mod lamperti;
mod model;
mod operators;
mod plan;
mod sk;

use thiserror::Error;

use crate::symbolic::EvalError;

pub use density::{
    build_expansion, evaluate_density, log_series, CorrectionTerm, DensityExpansion,
    ExpansionContext, PointTerms, MIN_DET_SIGMA,
};
pub use lamperti::{
    lamperti_wrap, LampertiExpansion, LampertiTransform, TransitionApproximation,
};
pub use model::{Lamperti, ModelError, ModelSpec};
pub use operators::{apply_operator, drift_correction_b, CoefficientTable, Operators};
pub use sk::{correction_q, enumerate_sk, SkTriple};
pub use plan::{ExpansionPlan, Group, Pair, MAX_ORDER};

#[derive(Debug, Error)]
pub enum ExpansionError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("degenerate diffusion matrix: {reason}")]
    Degenerate { reason: String },
    #[error("order {order} exceeds the supported maximum {max}")]
    OrderTooLarge { order: usize, max: usize },
    #[error("expected a state of dimension {expected}, got {found}")]
    Dimension { expected: usize, found: usize },
    #[error("state {x:?} lies outside the state space")]
    OutsideStateSpace { x: Vec<f64> },
    #[error("Lamperti transform: {0}")]
    Lamperti(String),
}
