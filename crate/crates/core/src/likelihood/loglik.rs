//! Log-form density expansion and the approximate log-likelihood.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::series::ObservationSeries;
use super::LikelihoodError;
use crate::expansion::{DensityExpansion, ModelSpec, TransitionApproximation};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoglikOptions {
    /// Expand the Lamperti-transformed model and add the log-Jacobian.
    pub lamperti: bool,
}

/// `-(m/2) log Δ + log det D(x_0) + Σ_k Λ_k(y) Δ^{k/2}` with `Λ_0 = log φ_Σ`
/// and the higher `Λ_k` taken from the formal logarithm of
/// `Σ_k (Ω_k/Ω_0) ε^k`. Finite wherever the model coefficients are.
pub fn log_density(exp: &DensityExpansion, delta: f64, x: &[f64]) -> f64 {
    exp.point(delta, x).log_density(delta)
}

/// Pairwise summation in a fixed order, independent of thread count.
pub(crate) fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        n if n <= 8 => v.iter().sum(),
        n => pairwise_sum(&v[..n / 2]) + pairwise_sum(&v[n / 2..]),
    }
}

/// Sum of per-transition terms computed in parallel, reduced in order.
pub(crate) fn sum_transitions(
    series: &ObservationSeries,
    term: impl Fn(&[f64], &[f64]) -> Result<f64, LikelihoodError> + Sync,
) -> Result<f64, LikelihoodError> {
    let pairs: Vec<(&[f64], &[f64])> = series.pairs().collect();
    let values: Vec<Result<f64, LikelihoodError>> = pairs
        .par_iter()
        .map(|(x0, x)| term(x0, x))
        .collect();
    let mut out = Vec::with_capacity(values.len());
    for (i, v) in values.into_iter().enumerate() {
        match v {
            Ok(v) => out.push(v),
            Err(e) => {
                return Err(LikelihoodError::Transition {
                    index: i + 1,
                    source: Box::new(e),
                })
            }
        }
    }
    Ok(pairwise_sum(&out))
}

/// `Σ_i l^(J)(Δ, x(iΔ) | x((i-1)Δ); θ)` for a prepared approximation.
pub fn loglik(
    approx: &TransitionApproximation,
    theta: &[f64],
    series: &ObservationSeries,
) -> Result<f64, LikelihoodError> {
    approx.check_theta(theta)?;
    let delta = series.delta();
    sum_transitions(series, |x0, x| Ok(approx.log_density(theta, delta, x0, x)?))
}

/// Order-`J` approximate log-likelihood of a series.
pub fn approx_loglik(
    model: &ModelSpec,
    theta: &[f64],
    series: &ObservationSeries,
    order: usize,
    opts: &LoglikOptions,
) -> Result<f64, LikelihoodError> {
    series.check_model(model)?;
    let approx = TransitionApproximation::new(model, order, opts.lamperti)?;
    loglik(&approx, theta, series)
}
