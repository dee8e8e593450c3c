//! Approximate maximum-likelihood estimation.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::loglik::loglik;
use super::optim::{nelder_mead, NelderMeadOptions, OptimError};
use super::series::ObservationSeries;
use super::LikelihoodError;
use crate::expansion::{ModelSpec, TransitionApproximation};

/// Relative step of the finite-difference Hessian used for standard errors.
pub const HESSIAN_STEP: f64 = 1e-4;

/// Free coordinates beyond this put a bounded parameter within about
/// `1e-13` of its bound (relative to the box width).
const FREE_LIMIT: f64 = 30.0;

/// Open box `lower < θ < upper`; infinite bounds are allowed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ParamBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, LikelihoodError> {
        if lower.len() != upper.len() {
            return Err(LikelihoodError::InvalidStart("box bounds have different lengths".into()));
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if l.is_nan() || u.is_nan() || l >= u {
                return Err(LikelihoodError::InvalidStart(format!(
                    "empty box for parameter {}: ({l}, {u})",
                    i + 1
                )));
            }
        }
        Ok(ParamBox { lower, upper })
    }

    /// `(0, inf)` for the model's positive parameters, the real line otherwise.
    pub fn default_for(model: &ModelSpec) -> Self {
        let lower = model
            .params
            .iter()
            .map(|p| if model.positive.contains(p) { 0.0 } else { f64::NEG_INFINITY })
            .collect();
        ParamBox {
            lower,
            upper: vec![f64::INFINITY; model.params.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.len()
            && theta
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(t, (l, u))| t > l && t < u)
    }

    /// Unconstrained coordinate to parameter.
    pub fn to_theta(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&u, (&l, &h))| match (l.is_finite(), h.is_finite()) {
                (true, true) => l + (h - l) / (1.0 + (-u).exp()),
                (true, false) => l + u.exp(),
                (false, true) => h - u.exp(),
                (false, false) => u,
            })
            .collect()
    }

    /// Quadratic wall past `|u| = FREE_LIMIT` on bounded coordinates. Keeps
    /// the simplex finite when the optimum sits on a bound, where the
    /// objective is otherwise flat out to infinity.
    fn saturation_penalty(&self, u: &[f64]) -> f64 {
        u.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .filter(|(_, (l, h))| l.is_finite() || h.is_finite())
            .map(|(u, _)| (u.abs() - FREE_LIMIT).max(0.0).powi(2))
            .sum()
    }

    /// Parameter to unconstrained coordinate.
    pub fn to_free(&self, theta: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&t, (&l, &h))| match (l.is_finite(), h.is_finite()) {
                (true, true) => ((t - l) / (h - t)).ln(),
                (true, false) => (t - l).ln(),
                (false, true) => (h - t).ln(),
                (false, false) => t,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub lamperti: bool,
    pub nelder_mead: NelderMeadOptions,
    /// Additional simplex runs started from the best point found.
    pub restarts: usize,
    /// Compute standard errors from the observed information.
    pub stderr: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            lamperti: false,
            nelder_mead: NelderMeadOptions::default(),
            restarts: 0,
            stderr: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub model: String,
    pub params: Vec<String>,
    /// Expansion order, `None` for an exact likelihood.
    pub order: Option<usize>,
    pub lamperti: bool,
    pub theta: Vec<f64>,
    pub loglik: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub stderr: Option<Vec<f64>>,
    pub transitions: usize,
}

impl EstimateReport {
    pub(crate) fn new(
        model: &ModelSpec,
        order: Option<usize>,
        lamperti: bool,
        best: Maximum,
        series: &ObservationSeries,
    ) -> Self {
        EstimateReport {
            model: model.name.clone(),
            params: model.params.clone(),
            order,
            lamperti,
            theta: best.theta,
            loglik: best.loglik,
            iterations: best.iterations,
            evaluations: best.evaluations,
            converged: best.converged,
            stderr: best.stderr,
            transitions: series.transitions(),
        }
    }
}

/// Initial simplex edges in free coordinates: 5% of each parameter (or
/// 2.5e-4 at zero), mapped through the box transform.
fn initial_steps(bounds: &ParamBox, theta: &[f64]) -> Vec<f64> {
    let u0 = bounds.to_free(theta);
    (0..theta.len())
        .map(|i| {
            let d = if theta[i] != 0.0 { 0.05 * theta[i].abs() } else { 2.5e-4 };
            let mut t = theta.to_vec();
            t[i] = theta[i] + d;
            if !bounds.contains(&t) {
                t[i] = theta[i] - d;
            }
            let step = if bounds.contains(&t) {
                bounds.to_free(&t)[i] - u0[i]
            } else {
                0.1
            };
            if step.is_finite() && step != 0.0 {
                step
            } else {
                0.1
            }
        })
        .collect()
}

/// Inverse observed information from a central-difference Hessian.
fn standard_errors(
    objective: &dyn Fn(&[f64]) -> Option<f64>,
    theta: &[f64],
) -> Option<Vec<f64>> {
    let n = theta.len();
    let h: Vec<f64> = theta.iter().map(|t| HESSIAN_STEP * t.abs().max(1e-8)).collect();
    let at = |shifts: &[(usize, f64)]| -> Option<f64> {
        let mut t = theta.to_vec();
        for &(i, s) in shifts {
            t[i] += s * h[i];
        }
        objective(&t)
    };
    let f0 = at(&[])?;
    let mut hess = DMatrix::zeros(n, n);
    for i in 0..n {
        let fp = at(&[(i, 1.0)])?;
        let fm = at(&[(i, -1.0)])?;
        hess[(i, i)] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
        for j in 0..i {
            let v = (at(&[(i, 1.0), (j, 1.0)])? - at(&[(i, 1.0), (j, -1.0)])?
                - at(&[(i, -1.0), (j, 1.0)])?
                + at(&[(i, -1.0), (j, -1.0)])?)
                / (4.0 * h[i] * h[j]);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    let info = -hess;
    let chol = info.cholesky()?;
    let cov = chol.inverse();
    Some((0..n).map(|i| cov[(i, i)].sqrt()).collect())
}

/// Outcome of [`maximize`].
#[derive(Debug, Clone, PartialEq)]
pub struct Maximum {
    pub theta: Vec<f64>,
    pub loglik: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub stderr: Option<Vec<f64>>,
}

/// Maximises `loglik` over the box by simplex search on the free
/// coordinates. Parameters the model rejects (positivity, declared
/// constraints) act as an infinite wall.
pub fn maximize(
    model: &ModelSpec,
    loglik: &(dyn Fn(&[f64]) -> Result<f64, LikelihoodError> + Sync),
    theta0: &[f64],
    bounds: &ParamBox,
    opts: &FitOptions,
) -> Result<Maximum, LikelihoodError> {
    if bounds.len() != model.num_params() || theta0.len() != model.num_params() {
        return Err(LikelihoodError::InvalidStart(format!(
            "model `{}` has {} parameters",
            model.name,
            model.num_params()
        )));
    }
    if !bounds.contains(theta0) {
        return Err(LikelihoodError::InvalidStart(format!(
            "start {theta0:?} is not strictly inside the box"
        )));
    }
    model
        .check_theta(theta0)
        .map_err(|e| LikelihoodError::InvalidStart(e.to_string()))?;
    let value = |theta: &[f64]| -> Option<f64> {
        if model.check_theta(theta).is_err() {
            return None;
        }
        loglik(theta).ok().filter(|v| v.is_finite())
    };
    let objective = |u: &[f64]| {
        value(&bounds.to_theta(u)).map_or(f64::INFINITY, |v| -v) + bounds.saturation_penalty(u)
    };
    let mut u = bounds.to_free(theta0);
    let mut iterations = 0;
    let mut evaluations = 0;
    let mut best = f64::INFINITY;
    let mut converged = false;
    for _ in 0..=opts.restarts {
        let theta = bounds.to_theta(&u);
        let step = initial_steps(bounds, &theta);
        let r = nelder_mead(objective, &u, &step, &opts.nelder_mead).map_err(|e| match e {
            OptimError::InfeasibleStart => LikelihoodError::InvalidStart(
                "log-likelihood is not finite at the start".into(),
            ),
            other => LikelihoodError::Optimizer(other),
        })?;
        iterations += r.iterations;
        evaluations += r.evaluations;
        converged = r.converged;
        let improved = best - r.f;
        u = r.x;
        best = r.f;
        if improved.abs() <= opts.nelder_mead.ftol || !converged {
            break;
        }
    }
    let theta = bounds.to_theta(&u);
    let stderr = if opts.stderr {
        standard_errors(&value, &theta)
    } else {
        None
    };
    Ok(Maximum {
        theta,
        loglik: -best,
        iterations,
        evaluations,
        converged,
        stderr,
    })
}

/// Order-`J` approximate MLE.
pub fn fit(
    model: &ModelSpec,
    series: &ObservationSeries,
    order: usize,
    theta0: &[f64],
    bounds: &ParamBox,
    opts: &FitOptions,
) -> Result<EstimateReport, LikelihoodError> {
    series.check_model(model)?;
    let approx = TransitionApproximation::new(model, order, opts.lamperti)?;
    let ll = |theta: &[f64]| loglik(&approx, theta, series);
    let best = maximize(model, &ll, theta0, bounds, opts)?;
    finish(EstimateReport::new(model, Some(order), opts.lamperti, best, series))
}

/// Turns an unconverged report into [`LikelihoodError::NotConverged`].
pub(crate) fn finish(report: EstimateReport) -> Result<EstimateReport, LikelihoodError> {
    if report.converged {
        Ok(report)
    } else {
        Err(LikelihoodError::NotConverged {
            report: Box::new(report),
        })
    }
}
