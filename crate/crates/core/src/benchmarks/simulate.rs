//! Exact and Euler path simulation.
//!
//! All randomness comes from `ChaCha8Rng::seed_from_u64(seed)` with
//! `set_stream(stream)`: a counter-based generator whose output does not
//! depend on platform or thread count. Replication `r` of an experiment
//! uses stream `r`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};

use super::exact::{dmrou_stationary_cov, gaussian_transition, sqr_transition, stationary_moments};
use super::{BenchmarkError, BenchmarkKind};
use crate::expansion::ModelSpec;
use crate::likelihood::ObservationSeries;
use crate::symbolic::Program;

pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normals(rng: &mut impl Rng, m: usize) -> DVector<f64> {
    DVector::from_iterator(m, (0..m).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Draws `X(Δ)` given `X(0)` from the exact transition law.
#[derive(Debug, Clone)]
pub enum ExactSampler {
    Gaussian {
        alpha: DVector<f64>,
        phi: DMatrix<f64>,
        chol: DMatrix<f64>,
    },
    /// `X(Δ) = G / c` with `G ~ Gamma(q + 1 + N, 1)` and
    /// `N ~ Poisson(c x_0 e^{-κΔ})`.
    Sqr { theta: Vec<f64>, delta: f64 },
}

impl ExactSampler {
    pub fn new(kind: BenchmarkKind, theta: &[f64], delta: f64) -> Result<Self, BenchmarkError> {
        kind.check_theta(theta)?;
        if !(delta > 0.0) {
            return Err(BenchmarkError::Unsupported(format!("sampling interval must be positive, got {delta}")));
        }
        match kind {
            BenchmarkKind::Sqr => Ok(ExactSampler::Sqr {
                theta: theta.to_vec(),
                delta,
            }),
            _ => {
                let g = gaussian_transition(kind, theta, delta)?;
                let chol = g
                    .cov
                    .clone()
                    .cholesky()
                    .ok_or_else(|| BenchmarkError::Unsupported("transition covariance is singular".into()))?
                    .l();
                Ok(ExactSampler::Gaussian {
                    alpha: g.alpha,
                    phi: g.phi,
                    chol,
                })
            }
        }
    }

    pub fn sample(&self, x0: &[f64], rng: &mut impl Rng) -> Vec<f64> {
        match self {
            ExactSampler::Gaussian { alpha, phi, chol } => {
                let x0 = DVector::from_column_slice(x0);
                let x = alpha + phi * (x0 - alpha) + chol * normals(rng, alpha.len());
                x.iter().copied().collect()
            }
            ExactSampler::Sqr { theta, delta } => {
                let t = sqr_transition(theta, *delta, x0[0]);
                let n = if t.u > 0.0 {
                    Poisson::new(t.u).expect("positive mean").sample(rng)
                } else {
                    0.0
                };
                let g: f64 = Gamma::new(t.q + 1.0 + n, 1.0).expect("positive shape").sample(rng);
                vec![g / t.c]
            }
        }
    }
}

/// A draw from the stationary law.
pub fn stationary_draw(kind: BenchmarkKind, theta: &[f64], rng: &mut impl Rng) -> Result<Vec<f64>, BenchmarkError> {
    let (mean, sd) = stationary_moments(kind, theta)?;
    Ok(match kind {
        BenchmarkKind::Mrou => vec![mean[0] + sd[0] * rng.sample::<f64, _>(StandardNormal)],
        BenchmarkKind::Sqr => {
            let (k, a, s) = (theta[0], theta[1], theta[2]);
            let shape = 2.0 * k * a / (s * s);
            let scale = s * s / (2.0 * k);
            vec![Gamma::new(shape, scale).expect("valid gamma").sample(rng)]
        }
        BenchmarkKind::Dmrou => {
            let l = dmrou_stationary_cov(theta).cholesky().expect("positive definite").l();
            let x = DVector::from_column_slice(&mean) + l * normals(rng, 2);
            x.iter().copied().collect()
        }
    })
}

fn check_start(kind: BenchmarkKind, x0: &[f64]) -> Result<(), BenchmarkError> {
    if !kind.model().in_state_space(x0) {
        return Err(BenchmarkError::Unsupported(format!(
            "start {x0:?} is outside the state space of {kind}"
        )));
    }
    Ok(())
}

/// `n` exact transitions from `x0` on stream 0 of `seed`.
pub fn simulate(
    kind: BenchmarkKind,
    theta: &[f64],
    delta: f64,
    n: usize,
    x0: &[f64],
    seed: u64,
) -> Result<ObservationSeries, BenchmarkError> {
    simulate_stream(kind, theta, delta, n, x0, &mut rng_for(seed, 0))
}

/// As [`simulate`], drawing from a caller-supplied generator.
pub fn simulate_stream(
    kind: BenchmarkKind,
    theta: &[f64],
    delta: f64,
    n: usize,
    x0: &[f64],
    rng: &mut impl Rng,
) -> Result<ObservationSeries, BenchmarkError> {
    if n == 0 {
        return Err(BenchmarkError::Unsupported("need at least one transition".into()));
    }
    check_start(kind, x0)?;
    let sampler = ExactSampler::new(kind, theta, delta)?;
    let mut states = Vec::with_capacity(n + 1);
    states.push(x0.to_vec());
    for _ in 0..n {
        let next = sampler.sample(states.last().expect("nonempty"), rng);
        states.push(next);
    }
    Ok(ObservationSeries::new(delta, states)?)
}

/// Euler scheme with `substeps` steps per interval for any model. Fails
/// if the path leaves the state space.
pub fn euler_simulate(
    model: &ModelSpec,
    theta: &[f64],
    delta: f64,
    n: usize,
    substeps: usize,
    x0: &[f64],
    seed: u64,
) -> Result<ObservationSeries, BenchmarkError> {
    model.check_theta(theta)?;
    if n == 0 || substeps == 0 {
        return Err(BenchmarkError::Unsupported("need at least one transition and one substep".into()));
    }
    if !model.in_state_space(x0) {
        return Err(BenchmarkError::Unsupported(format!(
            "start {x0:?} is outside the state space of `{}`",
            model.name
        )));
    }
    let m = model.dim;
    let mut exprs = model.mu.clone();
    exprs.extend(model.sigma.iter().flatten().cloned());
    let program = Program::compile(&exprs, &model.params).map_err(crate::expansion::ExpansionError::from)?;
    let h = delta / substeps as f64;
    let sh = h.sqrt();
    let mut rng = rng_for(seed, 0);
    let mut x = x0.to_vec();
    let mut states = vec![x.clone()];
    let mut out = vec![0.0; program.num_outputs()];
    for step in 1..=n {
        for _ in 0..substeps {
            program
                .eval_into(&x, theta, &mut out)
                .map_err(crate::expansion::ExpansionError::from)?;
            let dw: Vec<f64> = (0..m).map(|_| sh * rng.sample::<f64, _>(StandardNormal)).collect();
            let mut next = x.clone();
            for i in 0..m {
                next[i] += out[i] * h;
                for j in 0..m {
                    next[i] += out[m + i * m + j] * dw[j];
                }
            }
            if !model.in_state_space(&next) || next.iter().any(|v| !v.is_finite()) {
                return Err(BenchmarkError::LeftStateSpace { step, x: next });
            }
            x = next;
        }
        states.push(x.clone());
    }
    Ok(ObservationSeries::new(delta, states)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_path() {
        let th = BenchmarkKind::Sqr.reference_theta();
        let a = simulate(BenchmarkKind::Sqr, &th, 1.0 / 52.0, 200, &[0.06], 7).unwrap();
        let b = simulate(BenchmarkKind::Sqr, &th, 1.0 / 52.0, 200, &[0.06], 7).unwrap();
        let c = simulate(BenchmarkKind::Sqr, &th, 1.0 / 52.0, 200, &[0.06], 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.states().iter().all(|s| s[0] > 0.0));
    }

    #[test]
    fn streams_differ() {
        let mut a = rng_for(1, 0);
        let mut b = rng_for(1, 1);
        assert_ne!(a.random::<u64>(), b.random::<u64>());
    }

    #[test]
    fn euler_matches_model_drift() {
        // with σ tiny the Euler path follows the ODE x' = κ(α - x)
        let mrou = ModelSpec::builtin("mrou").unwrap();
        let s = euler_simulate(&mrou, &[0.5, 0.06, 1e-12], 1.0, 3, 1000, &[0.1], 1).unwrap();
        let want = 0.06 + 0.04 * (-1.5f64).exp();
        assert!((s.states()[3][0] - want).abs() < 1e-5);
    }

    #[test]
    fn zero_steps_rejected() {
        let th = BenchmarkKind::Mrou.reference_theta();
        assert!(simulate(BenchmarkKind::Mrou, &th, 0.1, 0, &[0.06], 1).is_err());
        assert!(simulate(BenchmarkKind::Sqr, &[0.5, 0.06, 0.5], 0.1, 5, &[0.06], 1).is_err());
    }
}
