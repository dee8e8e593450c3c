//! Closed-form transition density expansions for multivariate diffusions
//! and approximate maximum-likelihood estimation built on them.

// `!(x > 0.0)` is used on purpose so NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

pub mod ito;
pub mod symbolic;
pub mod expansion;
pub mod likelihood;
pub mod benchmarks;
