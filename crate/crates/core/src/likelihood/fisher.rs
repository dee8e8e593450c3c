//! Fisher information of the Gaussian benchmark models under their
//! stationary law, for asymptotic standard deviations of the MLE.

use gauss_quad::GaussHermite;
use nalgebra::{DMatrix, DVector};

use super::LikelihoodError;
use crate::benchmarks::{dmrou_stationary_cov, gaussian_transition, BenchmarkKind, GaussianTransition};

/// Quadrature nodes per dimension for the stationary expectation. The
/// integrand is quadratic in `x_0`, so any rule with two or more nodes is
/// exact; a few more guard against rounding.
const HERMITE_NODES: usize = 8;

fn check_stationary(kind: BenchmarkKind, theta: &[f64]) -> Result<(), LikelihoodError> {
    let n = kind.model().num_params();
    if theta.len() != n {
        return Err(LikelihoodError::NonStationary(format!("expected {n} parameters, got {}", theta.len())));
    }
    let kappas: &[usize] = match kind {
        BenchmarkKind::Dmrou => &[0, 2],
        _ => &[0],
    };
    if let Some(&i) = kappas.iter().find(|&&i| !(theta[i] > 0.0)) {
        return Err(LikelihoodError::NonStationary(format!(
            "{} = {} must be positive",
            kind.model().params[i],
            theta[i]
        )));
    }
    Ok(())
}

/// Per-observation information `i(θ)` of MROU `(κ, α, σ)` sampled at `Δ`.
pub fn fisher_information_mrou(theta: &[f64], delta: f64) -> Result<DMatrix<f64>, LikelihoodError> {
    check_stationary(BenchmarkKind::Mrou, theta)?;
    if !(theta[2] > 0.0) {
        return Err(LikelihoodError::NonStationary(format!("sigma = {} must be positive", theta[2])));
    }
    let (k, _, s) = (theta[0], theta[1], theta[2]);
    let e1 = (-k * delta).exp();
    let e2 = e1 * e1;
    let one_minus_e2 = -(-2.0 * k * delta).exp_m1();
    let v = s * s * one_minus_e2 / (2.0 * k);
    let dv_dk = s * s * (delta * e2 / k - one_minus_e2 / (2.0 * k * k));
    let dv_ds = 2.0 * v / s;
    let stat_var = s * s / (2.0 * k);
    let mut info = DMatrix::zeros(3, 3);
    info[(0, 0)] = delta * delta * e2 * stat_var / v + 0.5 * dv_dk * dv_dk / (v * v);
    info[(1, 1)] = (1.0 - e1).powi(2) / v;
    info[(0, 2)] = 0.5 * dv_dk * dv_ds / (v * v);
    info[(2, 0)] = info[(0, 2)];
    info[(2, 2)] = 2.0 / (s * s);
    Ok(info)
}

fn transition(theta: &[f64], delta: f64) -> GaussianTransition {
    gaussian_transition(BenchmarkKind::Dmrou, theta, delta).expect("checked parameters")
}

/// Per-observation information of DMROU `(κ11, κ21, κ22, α1, α2)`: the
/// Gaussian information of each transition, averaged over the stationary
/// law of `x_0` by Gauss-Hermite quadrature. Parameter derivatives are
/// central differences.
pub fn fisher_information_dmrou(theta: &[f64], delta: f64) -> Result<DMatrix<f64>, LikelihoodError> {
    check_stationary(BenchmarkKind::Dmrou, theta)?;
    let p = 5;
    let base = transition(theta, delta);
    let v_inv = base
        .cov
        .clone()
        .try_inverse()
        .ok_or_else(|| LikelihoodError::NonStationary("transition covariance is singular".into()))?;
    let mut dphi = Vec::with_capacity(p);
    let mut dalpha = Vec::with_capacity(p);
    let mut dcov = Vec::with_capacity(p);
    for i in 0..p {
        let h = 1e-5 * theta[i].abs().max(1.0);
        let mut tp = theta.to_vec();
        let mut tm = theta.to_vec();
        tp[i] += h;
        tm[i] -= h;
        let (gp, gm) = (transition(&tp, delta), transition(&tm, delta));
        dphi.push((&gp.phi - &gm.phi) / (2.0 * h));
        dalpha.push((&gp.alpha - &gm.alpha) / (2.0 * h));
        dcov.push((&gp.cov - &gm.cov) / (2.0 * h));
    }
    // mean α + Φ(x0 - α): derivative dα + dΦ u - Φ dα with u = x0 - α
    let jac = |u: &DVector<f64>| -> DMatrix<f64> {
        let mut j = DMatrix::zeros(2, p);
        for i in 0..p {
            let col = &dalpha[i] + &dphi[i] * u - &base.phi * &dalpha[i];
            j.set_column(i, &col);
        }
        j
    };
    let rule = GaussHermite::new(HERMITE_NODES).expect("degree at least two");
    let nodes = rule.as_node_weight_pairs();
    let l = dmrou_stationary_cov(theta)
        .cholesky()
        .ok_or_else(|| LikelihoodError::NonStationary("stationary covariance is not positive definite".into()))?
        .l();
    let mut mean_part = DMatrix::zeros(p, p);
    for &(a, wa) in nodes {
        for &(b, wb) in nodes {
            let u = &l * DVector::from_column_slice(&[a, b]) * std::f64::consts::SQRT_2;
            let j = jac(&u);
            mean_part += j.transpose() * &v_inv * j * (wa * wb / std::f64::consts::PI);
        }
    }
    let mut info = mean_part;
    for i in 0..p {
        let ai = &v_inv * &dcov[i];
        for k in 0..p {
            info[(i, k)] += 0.5 * (&ai * &v_inv * &dcov[k]).trace();
        }
    }
    Ok((&info + info.transpose()) * 0.5)
}

/// Information matrix for a Gaussian benchmark kind.
pub fn fisher_information(kind: BenchmarkKind, theta: &[f64], delta: f64) -> Result<DMatrix<f64>, LikelihoodError> {
    match kind {
        BenchmarkKind::Mrou => fisher_information_mrou(theta, delta),
        BenchmarkKind::Dmrou => fisher_information_dmrou(theta, delta),
        BenchmarkKind::Sqr => Err(LikelihoodError::Data(
            "no Fisher information is provided for the square-root model".into(),
        )),
    }
}

/// `sqrt(diag(i(θ)^{-1}) / n)`.
pub fn asymptotic_stddev(info: &DMatrix<f64>, n: usize) -> Result<Vec<f64>, LikelihoodError> {
    let inv = info
        .clone()
        .cholesky()
        .ok_or_else(|| LikelihoodError::Data("information matrix is not positive definite".into()))?
        .inverse();
    Ok((0..inv.nrows()).map(|i| (inv[(i, i)] / n as f64).sqrt()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mrou_table_values() {
        let th = [0.5, 0.06, 0.03];
        let sd = asymptotic_stddev(&fisher_information_mrou(&th, 1.0 / 52.0).unwrap(), 1000).unwrap();
        assert!((sd[0] - 0.229136).abs() < 1e-4, "{sd:?}");
        let sd = asymptotic_stddev(&fisher_information_mrou(&th, 1.0 / 12.0).unwrap(), 1000).unwrap();
        assert!((sd[1] - 0.006573).abs() < 1e-5, "{sd:?}");
    }

    #[test]
    fn dmrou_decouples_without_cross_reversion() {
        let th = [5.0, 0.0, 10.0, 0.1, -0.2];
        let d = 1.0 / 52.0;
        let info = fisher_information_dmrou(&th, d).unwrap();
        let a = fisher_information_mrou(&[5.0, 0.1, 1.0], d).unwrap();
        let b = fisher_information_mrou(&[10.0, -0.2, 1.0], d).unwrap();
        // (κ11, α1) block and (κ22, α2) block
        let rel = |x: f64, y: f64| (x - y).abs() / y.abs();
        assert!(rel(info[(0, 0)], a[(0, 0)]) < 1e-6);
        assert!(rel(info[(3, 3)], a[(1, 1)]) < 1e-6);
        assert!(rel(info[(2, 2)], b[(0, 0)]) < 1e-6);
        assert!(rel(info[(4, 4)], b[(1, 1)]) < 1e-6);
        assert!(info[(0, 2)].abs() < 1e-6 * info[(0, 0)]);
    }

    #[test]
    fn dmrou_mean_part_matches_trace_formula() {
        // E[(dΦ u)^T V^{-1} (dΦ u)] = tr(dΦ^T V^{-1} dΦ V∞) for the κ entries
        let th = [5.0, 1.0, 10.0, 0.0, 0.0];
        let d = 1.0 / 52.0;
        let info = fisher_information_dmrou(&th, d).unwrap();
        let g = transition(&th, d);
        let v_inv = g.cov.clone().try_inverse().unwrap();
        let vinf = dmrou_stationary_cov(&th);
        let h = 1e-5 * 5.0;
        let mut tp = th.to_vec();
        let mut tm = th.to_vec();
        tp[0] += h;
        tm[0] -= h;
        let dphi = (transition(&tp, d).phi - transition(&tm, d).phi) / (2.0 * h);
        let dcov = (transition(&tp, d).cov - transition(&tm, d).cov) / (2.0 * h);
        let want = (dphi.transpose() * &v_inv * &dphi * &vinf).trace()
            + 0.5 * (&v_inv * &dcov * &v_inv * &dcov).trace();
        assert!((info[(0, 0)] - want).abs() < 1e-9 * want);
        assert!(info.clone().cholesky().is_some());
    }

    #[test]
    fn nonstationary_is_refused() {
        assert!(matches!(
            fisher_information_mrou(&[-0.1, 0.06, 0.03], 0.1),
            Err(LikelihoodError::NonStationary(_))
        ));
        assert!(fisher_information_dmrou(&[5.0, 1.0, 0.0, 0.0, 0.0], 0.1).is_err());
    }
}
