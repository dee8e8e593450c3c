//! Exact transition laws of the benchmark models.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::ln_gamma;

use super::{BenchmarkError, BenchmarkKind};

/// `(Φ, V)` with `X(Δ) | X(0) = x_0 ~ N(α + Φ (x_0 - α), V)` for the
/// Gaussian kinds.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianTransition {
    pub alpha: DVector<f64>,
    pub phi: DMatrix<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianTransition {
    pub fn mean(&self, x0: &[f64]) -> DVector<f64> {
        let x0 = DVector::from_column_slice(x0);
        &self.alpha + &self.phi * (x0 - &self.alpha)
    }
}

/// `(e^{x} - 1)/x`, continuous at zero.
fn expm1_ratio(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0 + 0.5 * x
    } else {
        x.exp_m1() / x
    }
}

/// Mean-reversion matrix of the two-factor model, lower triangular.
#[cfg(test)]
fn dmrou_k(theta: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[theta[0], 0.0, theta[1], theta[2]])
}

/// Stationary covariance `V` with `K V + V K^T = I`.
pub fn dmrou_stationary_cov(theta: &[f64]) -> DMatrix<f64> {
    let (k11, k21, k22) = (theta[0], theta[1], theta[2]);
    let v11 = 1.0 / (2.0 * k11);
    let v21 = -k21 * v11 / (k11 + k22);
    let v22 = (1.0 - 2.0 * k21 * v21) / (2.0 * k22);
    DMatrix::from_row_slice(2, 2, &[v11, v21, v21, v22])
}

/// Gaussian transition of MROU (`m = 1`) or DMROU (`m = 2`).
pub fn gaussian_transition(
    kind: BenchmarkKind,
    theta: &[f64],
    delta: f64,
) -> Result<GaussianTransition, BenchmarkError> {
    kind.check_theta(theta)?;
    match kind {
        BenchmarkKind::Mrou => {
            let (k, a, s) = (theta[0], theta[1], theta[2]);
            // σ²(1 - e^{-2κΔ})/(2κ), written to survive κ -> 0
            let var = s * s * delta * expm1_ratio(-2.0 * k * delta);
            Ok(GaussianTransition {
                alpha: DVector::from_element(1, a),
                phi: DMatrix::from_element(1, 1, (-k * delta).exp()),
                cov: DMatrix::from_element(1, 1, var),
            })
        }
        BenchmarkKind::Dmrou => {
            let (k11, k21, k22) = (theta[0], theta[1], theta[2]);
            let (a, d) = (-k11 * delta, -k22 * delta);
            // exp of a lower-triangular 2x2 matrix
            let off = -k21 * delta * d.exp() * expm1_ratio(a - d);
            let phi = DMatrix::from_row_slice(2, 2, &[a.exp(), 0.0, off, d.exp()]);
            let vinf = dmrou_stationary_cov(theta);
            let mut cov = &vinf - &phi * &vinf * phi.transpose();
            cov[(0, 1)] = 0.5 * (cov[(0, 1)] + cov[(1, 0)]);
            cov[(1, 0)] = cov[(0, 1)];
            Ok(GaussianTransition {
                alpha: DVector::from_column_slice(&theta[3..5]),
                phi,
                cov,
            })
        }
        BenchmarkKind::Sqr => Err(BenchmarkError::Unsupported(
            "the square-root model has no Gaussian transition".into(),
        )),
    }
}

/// `log I_ν(z)` for `ν >= 0`, `z > 0`.
pub fn ln_bessel_i(nu: f64, z: f64) -> f64 {
    assert!(nu >= 0.0 && z > 0.0, "ln_bessel_i needs nu >= 0 and z > 0");
    if z > 50.0 + nu * nu {
        // Hankel asymptotic expansion; terms shrink fast in this range
        let mu = 4.0 * nu * nu;
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..40 {
            let odd = (2 * k - 1) as f64;
            term *= -(mu - odd * odd) / (k as f64 * 8.0 * z);
            sum += term;
            if term.abs() < 1e-17 * sum.abs() {
                break;
            }
        }
        return z - 0.5 * (2.0 * PI * z).ln() + sum.ln();
    }
    // power series summed relative to its largest term
    let lh = (0.5 * z).ln();
    let log_t0 = nu * lh - ln_gamma(nu + 1.0);
    let q = 0.25 * z * z;
    let mut terms = vec![0.0f64];
    let mut log_t = 0.0;
    let mut k = 0.0;
    loop {
        k += 1.0;
        log_t += (q / (k * (k + nu))).ln();
        terms.push(log_t);
        let peak = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if k * (k + nu) > q && log_t < peak - 40.0 {
            break;
        }
    }
    let peak = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = terms.iter().map(|t| (t - peak).exp()).sum();
    log_t0 + peak + s.ln()
}

/// Parameters of the square-root transition: `2c X(Δ)` is noncentral
/// chi-square with `2(q+1)` degrees of freedom and noncentrality `2u`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct SqrTransition {
    pub c: f64,
    pub u: f64,
    pub q: f64,
}

pub(crate) fn sqr_transition(theta: &[f64], delta: f64, x0: f64) -> SqrTransition {
    let (k, a, s) = (theta[0], theta[1], theta[2]);
    let c = 2.0 * k / (s * s * -(-k * delta).exp_m1());
    SqrTransition {
        c,
        u: c * x0 * (-k * delta).exp(),
        q: 2.0 * k * a / (s * s) - 1.0,
    }
}

/// Exact log-density with per-parameter work done once.
#[derive(Debug, Clone)]
pub(crate) enum PreparedExact {
    Gaussian {
        g: GaussianTransition,
        chol_inv: DMatrix<f64>,
        log_norm: f64,
    },
    Sqr { theta: [f64; 3], delta: f64 },
}

impl PreparedExact {
    pub fn new(kind: BenchmarkKind, theta: &[f64], delta: f64) -> Result<Self, BenchmarkError> {
        kind.check_theta(theta)?;
        match kind {
            BenchmarkKind::Sqr => Ok(PreparedExact::Sqr {
                theta: [theta[0], theta[1], theta[2]],
                delta,
            }),
            _ => {
                let g = gaussian_transition(kind, theta, delta)?;
                let m = g.alpha.len();
                let chol = g.cov.clone().cholesky().ok_or_else(|| {
                    BenchmarkError::Unsupported("transition covariance is singular".into())
                })?;
                let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
                let chol_inv = chol
                    .l()
                    .try_inverse()
                    .expect("triangular factor with positive diagonal");
                Ok(PreparedExact::Gaussian {
                    g,
                    chol_inv,
                    log_norm: -0.5 * (m as f64 * (2.0 * PI).ln() + log_det),
                })
            }
        }
    }

    pub fn log_density(&self, x0: &[f64], x: &[f64]) -> f64 {
        match self {
            PreparedExact::Gaussian { g, chol_inv, log_norm } => {
                let r = DVector::from_column_slice(x) - g.mean(x0);
                let z = chol_inv * r;
                log_norm - 0.5 * z.norm_squared()
            }
            PreparedExact::Sqr { theta, delta } => {
                if x[0] <= 0.0 || x0[0] <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                let t = sqr_transition(theta, *delta, x0[0]);
                let v = t.c * x[0];
                let z = 2.0 * (t.u * v).sqrt();
                t.c.ln() - t.u - v + 0.5 * t.q * (v / t.u).ln() + ln_bessel_i(t.q.abs(), z)
            }
        }
    }
}

/// Exact log transition density.
pub fn exact_log_density(
    kind: BenchmarkKind,
    theta: &[f64],
    delta: f64,
    x0: &[f64],
    x: &[f64],
) -> Result<f64, BenchmarkError> {
    Ok(PreparedExact::new(kind, theta, delta)?.log_density(x0, x))
}

pub fn exact_density(
    kind: BenchmarkKind,
    theta: &[f64],
    delta: f64,
    x0: &[f64],
    x: &[f64],
) -> Result<f64, BenchmarkError> {
    Ok(exact_log_density(kind, theta, delta, x0, x)?.exp())
}

/// Conditional mean and per-coordinate standard deviation of `X(Δ)`.
pub fn conditional_moments(
    kind: BenchmarkKind,
    theta: &[f64],
    delta: f64,
    x0: &[f64],
) -> Result<(Vec<f64>, Vec<f64>), BenchmarkError> {
    match kind {
        BenchmarkKind::Sqr => {
            kind.check_theta(theta)?;
            let (k, a, s) = (theta[0], theta[1], theta[2]);
            let e = (-k * delta).exp();
            let mean = a + (x0[0] - a) * e;
            let var = x0[0] * s * s / k * (e - e * e) + a * s * s / (2.0 * k) * (1.0 - e).powi(2);
            Ok((vec![mean], vec![var.sqrt()]))
        }
        _ => {
            let g = gaussian_transition(kind, theta, delta)?;
            let mean = g.mean(x0).iter().copied().collect();
            let sd = (0..x0.len()).map(|i| g.cov[(i, i)].sqrt()).collect();
            Ok((mean, sd))
        }
    }
}

/// Stationary mean and per-coordinate standard deviation.
pub fn stationary_moments(kind: BenchmarkKind, theta: &[f64]) -> Result<(Vec<f64>, Vec<f64>), BenchmarkError> {
    kind.check_theta(theta)?;
    Ok(match kind {
        BenchmarkKind::Mrou => (vec![theta[1]], vec![theta[2] / (2.0 * theta[0]).sqrt()]),
        BenchmarkKind::Sqr => (
            vec![theta[1]],
            vec![theta[2] * (theta[1] / (2.0 * theta[0])).sqrt()],
        ),
        BenchmarkKind::Dmrou => {
            let v = dmrou_stationary_cov(theta);
            (theta[3..5].to_vec(), vec![v[(0, 0)].sqrt(), v[(1, 1)].sqrt()])
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bessel_regimes_agree() {
        // both branches are accurate between 30 and 50 + ν²
        for nu in [0.0, 0.5, 1.6667, 3.0] {
            for z in [0.1, 1.0, 7.0, 30.0] {
                let s = ln_bessel_i(nu, z);
                assert!(s.is_finite());
            }
            let z = 60.0 + nu * nu;
            let series = {
                let lh = (0.5 * z).ln();
                let mut acc = 0.0f64;
                let mut lt = nu * lh - ln_gamma(nu + 1.0);
                let base = lt;
                for k in 0..400 {
                    acc += (lt - base).exp();
                    let k = k as f64 + 1.0;
                    lt += 2.0 * lh - (k * (k + nu)).ln();
                }
                base + acc.ln()
            };
            let asym = ln_bessel_i(nu, z);
            assert!((series - asym).abs() < 1e-12, "nu={nu}: {series} vs {asym}");
        }
        // I_{1/2}(z) = sqrt(2/(πz)) sinh z
        for z in [0.3, 2.0, 20.0, 200.0] {
            let want = 0.5 * (2.0 / (PI * z)).ln() + z + (-0.5 * (-2.0 * z).exp_m1()).ln();
            assert!((ln_bessel_i(0.5, z) - want).abs() < 1e-12, "z={z}");
        }
    }

    #[test]
    fn ou_limit_without_reversion() {
        let g = gaussian_transition(BenchmarkKind::Mrou, &[1e-13, 0.06, 0.03], 0.5).unwrap();
        assert!((g.cov[(0, 0)] - 0.03f64.powi(2) * 0.5).abs() < 1e-15);
        assert!((g.mean(&[0.1])[0] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn dmrou_factorises_without_coupling() {
        let theta = [5.0, 0.0, 10.0, 0.1, -0.2];
        let d = 1.0 / 52.0;
        let joint = exact_log_density(BenchmarkKind::Dmrou, &theta, d, &[0.3, 0.1], &[0.25, 0.0]).unwrap();
        let a = exact_log_density(BenchmarkKind::Mrou, &[5.0, 0.1, 1.0], d, &[0.3], &[0.25]).unwrap();
        let b = exact_log_density(BenchmarkKind::Mrou, &[10.0, -0.2, 1.0], d, &[0.1], &[0.0]).unwrap();
        assert!((joint - a - b).abs() < 1e-12);
    }

    #[test]
    fn stationary_covariance_solves_lyapunov() {
        let theta = [5.0, 1.0, 10.0, 0.0, 0.0];
        let k = dmrou_k(&theta);
        let v = dmrou_stationary_cov(&theta);
        let r = &k * &v + &v * k.transpose() - DMatrix::identity(2, 2);
        assert!(r.norm() < 1e-14);
    }
}
