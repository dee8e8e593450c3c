//! Expansions through a Lamperti transform, and a single entry point for
//! transition densities with or without one.
//!
//! For `z = γ(x)` Itô's formula gives the transformed model
//! `μ_Z = γ' μ + ½ γ'' σ²` and `σ_Z = γ' σ`, both composed with `γ⁻¹`. The
//! density of `X` is `p_Z(γ(x) | γ(x_0)) |γ'(x)|`. For a proper Lamperti
//! transform `γ' = 1/σ`; the general Jacobian also covers rescaled
//! transforms.

use std::sync::Arc;

use num_rational::BigRational;

use super::density::{build_expansion, DensityExpansion, ExpansionContext, PointTerms};
use super::model::ModelSpec;
use super::plan::ExpansionPlan;
use super::ExpansionError;
use crate::symbolic::{Expr, Program};

/// Number of interior points at which the sign of `γ'` is sampled.
const MONOTONE_SAMPLES: usize = 257;

#[derive(Debug, Clone)]
pub struct LampertiTransform {
    x_model: ModelSpec,
    z_model: ModelSpec,
    /// Outputs `γ(x)` and `γ'(x)`.
    program: Program,
}

/// Maps `t ∈ (0, 1)` onto the open interval `(lo, hi)`.
fn interior_point(lo: f64, hi: f64, t: f64) -> f64 {
    match (lo.is_finite(), hi.is_finite()) {
        (true, true) => lo + t * (hi - lo),
        (true, false) => lo + t / (1.0 - t),
        (false, true) => hi - (1.0 - t) / t,
        (false, false) => (std::f64::consts::PI * (t - 0.5)).tan(),
    }
}

impl LampertiTransform {
    pub fn new(model: &ModelSpec) -> Result<Self, ExpansionError> {
        if model.dim != 1 {
            return Err(ExpansionError::Lamperti(format!(
                "model `{}` is {}-dimensional; only scalar models can be transformed",
                model.name, model.dim
            )));
        }
        let lam = model.lamperti.as_ref().ok_or_else(|| {
            ExpansionError::Lamperti(format!("model `{}` declares no transform", model.name))
        })?;
        let g1 = lam.gamma.differentiate(0);
        let g2 = g1.differentiate(0);
        let half = Expr::constant(BigRational::new(1.into(), 2.into()));
        let s = model.sigma[0][0].clone();
        let mu_z = g1.clone() * model.mu[0].clone() + half * g2 * s.clone() * s.clone();
        let sigma_z = g1.clone() * s;
        let z_model = ModelSpec {
            name: format!("{}-lamperti", model.name),
            dim: 1,
            params: model.params.clone(),
            positive: model.positive.clone(),
            mu: vec![mu_z.substitute(0, &lam.gamma_inv)],
            sigma: vec![vec![sigma_z.substitute(0, &lam.gamma_inv)]],
            state_space: vec![(f64::NEG_INFINITY, f64::INFINITY)],
            lamperti: None,
            constraints: model.constraints.clone(),
        };
        let program = Program::compile(&[lam.gamma.clone(), g1], &model.params)?;
        Ok(LampertiTransform {
            x_model: model.clone(),
            z_model,
            program,
        })
    }

    pub fn x_model(&self) -> &ModelSpec {
        &self.x_model
    }

    pub fn z_model(&self) -> &ModelSpec {
        &self.z_model
    }

    /// `(γ(x), log |γ'(x)|)`.
    pub fn transform(&self, theta: &[f64], x: f64) -> Result<(f64, f64), ExpansionError> {
        let v = self.program.eval(&[x], theta)?;
        Ok((v[0], v[1].abs().ln()))
    }

    /// Fails unless `γ'` keeps one strict sign over the state space.
    pub fn check_monotone(&self, theta: &[f64]) -> Result<(), ExpansionError> {
        let (lo, hi) = self.x_model.state_space[0];
        let mut sign = 0.0;
        for s in 1..=MONOTONE_SAMPLES {
            let t = s as f64 / (MONOTONE_SAMPLES + 1) as f64;
            let x = interior_point(lo, hi, t);
            let d = self.program.eval(&[x], theta)?[1];
            if !(d != 0.0 && d.is_finite()) || (sign != 0.0 && d.signum() != sign) {
                return Err(ExpansionError::Lamperti(format!(
                    "gamma is not strictly monotone on the state space (gamma'({x}) = {d})"
                )));
            }
            sign = d.signum();
        }
        Ok(())
    }
}

/// An expansion over `Z = γ(X)` presented as a density over `X`.
#[derive(Debug, Clone)]
pub struct LampertiExpansion {
    transform: LampertiTransform,
    z: DensityExpansion,
}

/// Wraps an expansion of the transformed model into a density over `X`.
pub fn lamperti_wrap(
    z: DensityExpansion,
    model: &ModelSpec,
) -> Result<LampertiExpansion, ExpansionError> {
    let transform = LampertiTransform::new(model)?;
    transform.check_monotone(z.context().theta())?;
    Ok(LampertiExpansion { transform, z })
}

impl LampertiExpansion {
    /// Builds the `Z` expansion at `γ(x_0)` and wraps it.
    pub fn build(
        model: &ModelSpec,
        theta: &[f64],
        x0: f64,
        order: usize,
    ) -> Result<LampertiExpansion, ExpansionError> {
        if !model.in_state_space(&[x0]) {
            return Err(ExpansionError::OutsideStateSpace { x: vec![x0] });
        }
        let transform = LampertiTransform::new(model)?;
        let (z0, _) = transform.transform(theta, x0)?;
        let ctx = ExpansionContext::new(transform.z_model(), theta, &[z0])?;
        lamperti_wrap(build_expansion(&ctx, order)?, model)
    }

    pub fn z_expansion(&self) -> &DensityExpansion {
        &self.z
    }

    pub fn evaluate(&self, delta: f64, x: f64) -> Result<f64, ExpansionError> {
        if !self.transform.x_model.in_state_space(&[x]) {
            return Ok(0.0);
        }
        let theta = self.z.context().theta();
        let (z, log_jac) = self.transform.transform(theta, x)?;
        Ok(self.z.evaluate(delta, &[z]) * log_jac.exp())
    }
}

/// Transition density approximation of a fixed order, evaluated one
/// transition at a time. Shares the cached plan of its model.
#[derive(Debug, Clone)]
pub struct TransitionApproximation {
    plan: Arc<ExpansionPlan>,
    lamperti: Option<LampertiTransform>,
}

impl TransitionApproximation {
    pub fn new(model: &ModelSpec, order: usize, lamperti: bool) -> Result<Self, ExpansionError> {
        if lamperti {
            let t = LampertiTransform::new(model)?;
            Ok(TransitionApproximation {
                plan: ExpansionPlan::cached(t.z_model(), order)?,
                lamperti: Some(t),
            })
        } else {
            Ok(TransitionApproximation {
                plan: ExpansionPlan::cached(model, order)?,
                lamperti: None,
            })
        }
    }

    /// The model the densities refer to (the untransformed one).
    pub fn model(&self) -> &ModelSpec {
        match &self.lamperti {
            Some(t) => t.x_model(),
            None => self.plan.model(),
        }
    }

    pub fn order(&self) -> usize {
        self.plan.order()
    }

    pub fn uses_lamperti(&self) -> bool {
        self.lamperti.is_some()
    }

    /// Checks the parameters, including monotonicity of the transform.
    pub fn check_theta(&self, theta: &[f64]) -> Result<(), ExpansionError> {
        self.model().check_theta(theta)?;
        if let Some(t) = &self.lamperti {
            t.check_monotone(theta)?;
        }
        Ok(())
    }

    /// Expansion values at one transition plus the log-Jacobian of the
    /// transform (zero without one).
    pub fn point(
        &self,
        theta: &[f64],
        delta: f64,
        x0: &[f64],
        x: &[f64],
    ) -> Result<(PointTerms, f64), ExpansionError> {
        let model = self.model();
        for s in [x0, x] {
            if s.len() != model.dim {
                return Err(ExpansionError::Dimension {
                    expected: model.dim,
                    found: s.len(),
                });
            }
            if !model.in_state_space(s) {
                return Err(ExpansionError::OutsideStateSpace { x: s.to_vec() });
            }
        }
        match &self.lamperti {
            None => Ok((self.plan.point_terms(theta, delta, x0, x)?, 0.0)),
            Some(t) => {
                let (z0, _) = t.transform(theta, x0[0])?;
                let (z, log_jac) = t.transform(theta, x[0])?;
                Ok((self.plan.point_terms(theta, delta, &[z0], &[z])?, log_jac))
            }
        }
    }

    /// `p^(J)(Δ, x | x_0)`.
    pub fn density(&self, theta: &[f64], delta: f64, x0: &[f64], x: &[f64]) -> Result<f64, ExpansionError> {
        let (pt, log_jac) = self.point(theta, delta, x0, x)?;
        Ok(pt.density(delta) * log_jac.exp())
    }

    /// Log-form expansion `l^(J)(Δ, x | x_0)`; always finite.
    pub fn log_density(
        &self,
        theta: &[f64],
        delta: f64,
        x0: &[f64],
        x: &[f64],
    ) -> Result<f64, ExpansionError> {
        let (pt, log_jac) = self.point(theta, delta, x0, x)?;
        Ok(pt.log_density(delta) + log_jac)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sqr_transformed_model() {
        let sqr = ModelSpec::builtin("sqr").unwrap();
        let t = LampertiTransform::new(&sqr).unwrap();
        let z = t.z_model();
        assert!(z.sigma[0][0].is_one(), "{}", z.sigma[0][0]);
        let (k, a, s) = (0.5, 0.06, 0.15);
        let p = sqr.theta_map(&[k, a, s]);
        for zz in [0.5, 3.2, 7.0] {
            let want = (2.0 * k * a / (s * s) - 0.5) / zz - k * zz / 2.0;
            let got = z.mu[0].eval(&[zz], &p).unwrap();
            assert!((got - want).abs() < 1e-12 * want.abs().max(1.0), "{got} {want}");
        }
        t.check_monotone(&[k, a, s]).unwrap();
    }

    #[test]
    fn missing_or_bad_transforms() {
        let dm = ModelSpec::builtin("dmrou").unwrap();
        assert!(LampertiTransform::new(&dm).is_err());
        let text = r#"
name = "wiggle"
dimension = 1
parameters = ["s"]
[drift]
mu_1 = "0"
[dispersion]
sigma_1_1 = "s"
[lamperti]
gamma = "x1^2"
gamma_inv = "sqrt(x1)"
"#;
        let model = ModelSpec::from_toml_str(text, "wiggle.toml").unwrap();
        let t = LampertiTransform::new(&model).unwrap();
        assert!(matches!(t.check_monotone(&[1.0]), Err(ExpansionError::Lamperti(_))));
    }

    #[test]
    fn mrou_transform_matches_direct_expansion() {
        let mrou = ModelSpec::builtin("mrou").unwrap();
        let theta = [0.5, 0.06, 0.03];
        let delta = 1.0 / 52.0;
        let direct = TransitionApproximation::new(&mrou, 4, false).unwrap();
        let wrapped = TransitionApproximation::new(&mrou, 4, true).unwrap();
        for x in [0.07, 0.075, 0.08, 0.085, 0.09] {
            let a = direct.density(&theta, delta, &[0.08], &[x]).unwrap();
            let b = wrapped.density(&theta, delta, &[0.08], &[x]).unwrap();
            assert!((a - b).abs() <= 1e-12 * a.abs(), "{a} {b}");
        }
    }
}
