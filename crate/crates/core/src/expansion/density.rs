//! Evaluation of the expansion at a backward state and assembly of `Ω_k`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde_json::{json, Map, Value};

use super::model::ModelSpec;
use super::operators::drift_correction_b;
use super::plan::ExpansionPlan;
use super::ExpansionError;
use crate::symbolic::{Monomial, Poly};

/// Threshold on `det Σ(x_0)` below which the expansion is refused.
pub const MIN_DET_SIGMA: f64 = 1e-12;

/// Quantities derived from `σ(x_0)`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Frame {
    pub sigma: Vec<Vec<f64>>,
    pub d: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
    pub cov_inv: Vec<Vec<f64>>,
    pub sigma_inv: Vec<Vec<f64>>,
    pub l: Vec<Vec<f64>>,
    pub det_d: f64,
    /// `-m/2 log 2π - 1/2 log det Σ`.
    pub log_norm: f64,
}

fn rows(a: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..a.nrows())
        .map(|i| (0..a.ncols()).map(|j| a[(i, j)]).collect())
        .collect()
}

impl Frame {
    pub fn new(m: usize, sigma_flat: &[f64]) -> Result<Frame, ExpansionError> {
        let sigma = DMatrix::from_row_slice(m, m, &sigma_flat[..m * m]);
        let mut d = Vec::with_capacity(m);
        for k in 0..m {
            let s: f64 = (0..m).map(|j| sigma[(k, j)] * sigma[(k, j)]).sum();
            if !(s > 0.0 && s.is_finite()) {
                return Err(ExpansionError::Degenerate {
                    reason: format!("row {} of the dispersion matrix vanishes", k + 1),
                });
            }
            d.push(1.0 / s.sqrt());
        }
        let dm = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&d));
        let ds = &dm * &sigma;
        let cov = &ds * ds.transpose();
        let det = cov.determinant();
        if !(det >= MIN_DET_SIGMA) {
            return Err(ExpansionError::Degenerate {
                reason: format!("det Sigma(x0) = {det:e} is below {MIN_DET_SIGMA:e}"),
            });
        }
        let cov_inv = cov.clone().try_inverse().ok_or_else(|| ExpansionError::Degenerate {
            reason: "Sigma(x0) is singular".into(),
        })?;
        let sigma_inv = sigma.clone().try_inverse().ok_or_else(|| ExpansionError::Degenerate {
            reason: "sigma(x0) is singular".into(),
        })?;
        let dinv = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            m,
            d.iter().map(|v| 1.0 / v),
        ));
        let l = &sigma_inv * dinv;
        Ok(Frame {
            sigma: rows(&sigma),
            d: d.clone(),
            det_d: d.iter().product(),
            log_norm: -0.5 * m as f64 * (2.0 * PI).ln() - 0.5 * det.ln(),
            cov: rows(&cov),
            cov_inv: rows(&cov_inv),
            sigma_inv: rows(&sigma_inv),
            l: rows(&l),
        })
    }

    /// `y = D (x - x_0) / sqrt(Δ)`.
    pub fn standardize(&self, delta: f64, x0: &[f64], x: &[f64]) -> Vec<f64> {
        let s = delta.sqrt();
        self.d
            .iter()
            .zip(x.iter().zip(x0))
            .map(|(d, (x, x0))| d * (x - x0) / s)
            .collect()
    }

    /// `log φ_Σ(y)`.
    pub fn log_gaussian(&self, y: &[f64]) -> f64 {
        let mut q = 0.0;
        for (i, yi) in y.iter().enumerate() {
            for (j, yj) in y.iter().enumerate() {
                q += yi * self.cov_inv[i][j] * yj;
            }
        }
        self.log_norm - 0.5 * q
    }
}

/// A model frozen at parameter values and a backward state.
#[derive(Debug, Clone)]
pub struct ExpansionContext {
    model: ModelSpec,
    theta: Vec<f64>,
    x0: Vec<f64>,
    b: Vec<f64>,
    frame: Frame,
}

impl ExpansionContext {
    pub fn new(model: &ModelSpec, theta: &[f64], x0: &[f64]) -> Result<Self, ExpansionError> {
        model.check_theta(theta)?;
        if x0.len() != model.dim {
            return Err(ExpansionError::Dimension {
                expected: model.dim,
                found: x0.len(),
            });
        }
        if !model.in_state_space(x0) {
            return Err(ExpansionError::OutsideStateSpace { x: x0.to_vec() });
        }
        let map = model.theta_map(theta);
        let mut sigma = Vec::with_capacity(model.dim * model.dim);
        for e in model.sigma.iter().flatten() {
            sigma.push(e.eval(x0, &map)?);
        }
        let b = drift_correction_b(model)
            .iter()
            .map(|e| e.eval(x0, &map))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ExpansionContext {
            model: model.clone(),
            theta: theta.to_vec(),
            x0: x0.to_vec(),
            b,
            frame: Frame::new(model.dim, &sigma)?,
        })
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    /// Stratonovich drift `b(x_0)`.
    pub fn b(&self) -> &[f64] {
        &self.b
    }

    /// `σ(x_0)`, row-major.
    pub fn sigma(&self) -> &[Vec<f64>] {
        &self.frame.sigma
    }

    /// Diagonal of `D(x_0)`.
    pub fn d(&self) -> &[f64] {
        &self.frame.d
    }

    pub fn det_d(&self) -> f64 {
        self.frame.det_d
    }

    /// `Σ(x_0) = D σ σ^T D`.
    pub fn covariance(&self) -> &[Vec<f64>] {
        &self.frame.cov
    }

    pub fn covariance_inverse(&self) -> &[Vec<f64>] {
        &self.frame.cov_inv
    }

    pub fn sigma_inverse(&self) -> &[Vec<f64>] {
        &self.frame.sigma_inv
    }

    pub(crate) fn frame(&self) -> &Frame {
        &self.frame
    }
}

/// `Ω_k(y) = q(y) φ_Σ(y)`.
#[derive(Debug, Clone)]
pub struct CorrectionTerm {
    pub k: usize,
    pub q: Poly<f64>,
}

/// The expansion `Ω_0 .. Ω_J` at a fixed `(θ, x_0)`.
#[derive(Debug, Clone)]
pub struct DensityExpansion {
    context: ExpansionContext,
    terms: Vec<CorrectionTerm>,
}

/// Assembles `Ω_0 .. Ω_order` for a context.
pub fn build_expansion(
    ctx: &ExpansionContext,
    order: usize,
) -> Result<DensityExpansion, ExpansionError> {
    let plan = ExpansionPlan::cached(ctx.model(), order)?;
    let m = ctx.model.dim;
    let values = plan.program().eval(&ctx.x0, &ctx.theta)?;
    let polys = plan.group_polys(&ctx.frame.l, &ctx.frame.cov_inv);
    let mut terms = vec![CorrectionTerm {
        k: 0,
        q: Poly::one(m),
    }];
    for k in 1..=order {
        let coefs = plan.group_coefficients(k, &values, &ctx.frame.d);
        let mut q = Poly::zero(m);
        for (c, h) in coefs.iter().zip(&polys.polys[k - 1]) {
            if *c != 0.0 {
                q = &q + &h.scale(c);
            }
        }
        terms.push(CorrectionTerm { k, q });
    }
    Ok(DensityExpansion {
        context: ctx.clone(),
        terms,
    })
}

/// `p^(J)(Δ, x | x_0)`, see [`DensityExpansion::evaluate`].
pub fn evaluate_density(exp: &DensityExpansion, delta: f64, x: &[f64]) -> f64 {
    exp.evaluate(delta, x)
}

fn monomial_key(mono: &Monomial, prefix: &str) -> String {
    let parts: Vec<String> = mono
        .0
        .iter()
        .enumerate()
        .filter(|(_, &e)| e > 0)
        .map(|(i, &e)| {
            if e == 1 {
                format!("{prefix}{}", i + 1)
            } else {
                format!("{prefix}{}^{e}", i + 1)
            }
        })
        .collect();
    if parts.is_empty() {
        "1".into()
    } else {
        parts.join("*")
    }
}

impl DensityExpansion {
    pub fn order(&self) -> usize {
        self.terms.len() - 1
    }

    pub fn context(&self) -> &ExpansionContext {
        &self.context
    }

    pub fn terms(&self) -> &[CorrectionTerm] {
        &self.terms
    }

    /// `Ω_k(y)`.
    pub fn omega(&self, k: usize, y: &[f64]) -> f64 {
        self.terms[k].q.eval(y) * self.context.frame.log_gaussian(y).exp()
    }

    /// `y = D(x_0)(x - x_0)/sqrt(Δ)`.
    pub fn standardize(&self, delta: f64, x: &[f64]) -> Vec<f64> {
        self.context.frame.standardize(delta, &self.context.x0, x)
    }

    /// `Δ^{-m/2} det D(x_0) Σ_k Ω_k(y) Δ^{k/2}`. Truncated series can be
    /// negative in the tails; the value is returned as is.
    pub fn evaluate(&self, delta: f64, x: &[f64]) -> f64 {
        let y = self.standardize(delta, x);
        let eps = delta.sqrt();
        let mut sum = 0.0;
        let mut pow = 1.0;
        for t in &self.terms {
            sum += t.q.eval(&y) * pow;
            pow *= eps;
        }
        let m = self.context.model.dim as f64;
        sum * self.context.frame.log_gaussian(&y).exp() * self.context.frame.det_d
            / delta.powf(m / 2.0)
    }

    /// Series values at the forward state `x`.
    pub fn point(&self, delta: f64, x: &[f64]) -> PointTerms {
        let y = self.standardize(delta, x);
        PointTerms {
            q: self.terms.iter().map(|t| t.q.eval(&y)).collect(),
            log_gaussian: self.context.frame.log_gaussian(&y),
            log_det_d: self.context.frame.det_d.ln(),
            y,
        }
    }

    /// Machine-readable form: every `q_k` as a map from monomial to
    /// coefficient, together with the frozen context.
    pub fn to_json(&self) -> Value {
        let ctx = &self.context;
        let theta: Map<String, Value> = ctx
            .model
            .params
            .iter()
            .zip(&ctx.theta)
            .map(|(k, v)| (k.clone(), json!(v)))
            .collect();
        let terms: Vec<Value> = self
            .terms
            .iter()
            .map(|t| {
                let q: Map<String, Value> = t
                    .q
                    .terms()
                    .rev()
                    .map(|(mono, c)| (monomial_key(mono, "y"), json!(c)))
                    .collect();
                json!({ "k": t.k, "q": q })
            })
            .collect();
        json!({
            "model": ctx.model.name,
            "order": self.order(),
            "theta": theta,
            "x0": ctx.x0,
            "D": ctx.frame.d,
            "det_D": ctx.frame.det_d,
            "Sigma": ctx.frame.cov,
            "terms": terms,
        })
    }
}

/// Values of the expansion at one transition, without building polynomials.
#[derive(Debug, Clone)]
pub struct PointTerms {
    /// `q_k(y)` for `k = 0..=J`, with `q_0 = 1`.
    pub q: Vec<f64>,
    pub y: Vec<f64>,
    /// `log φ_Σ(y)`.
    pub log_gaussian: f64,
    pub log_det_d: f64,
}

impl PointTerms {
    /// `log p^(J)` with the log-series of `Σ q_k ε^k` in place of the log
    /// of the truncated sum, so the result is always finite.
    pub fn log_density(&self, delta: f64) -> f64 {
        let m = self.y.len() as f64;
        let eps = delta.sqrt();
        let lam = log_series(&self.q);
        let mut acc = 0.0;
        for l in lam.iter().rev() {
            acc = acc * eps + l;
        }
        -0.5 * m * delta.ln() + self.log_det_d + self.log_gaussian + acc
    }

    /// `p^(J)` itself.
    pub fn density(&self, delta: f64) -> f64 {
        let m = self.y.len() as f64;
        let eps = delta.sqrt();
        let mut acc = 0.0;
        for q in self.q.iter().rev() {
            acc = acc * eps + q;
        }
        acc * (self.log_gaussian + self.log_det_d).exp() / delta.powf(m / 2.0)
    }
}

/// Coefficients `L_0 .. L_J` of `log(Σ a_k ε^k)` for `a_0 = 1`, from
/// `k L_k = k a_k - Σ_{j<k} j L_j a_{k-j}`.
pub fn log_series(a: &[f64]) -> Vec<f64> {
    let mut l = vec![0.0; a.len()];
    for k in 1..a.len() {
        let mut s = k as f64 * a[k];
        for j in 1..k {
            s -= j as f64 * l[j] * a[k - j];
        }
        l[k] = s / k as f64;
    }
    l
}

impl ExpansionPlan {
    /// `q_k(y)` at one transition `x_0 -> x` over `Δ`.
    pub fn point_terms(
        &self,
        theta: &[f64],
        delta: f64,
        x0: &[f64],
        x: &[f64],
    ) -> Result<PointTerms, ExpansionError> {
        let m = self.model().dim;
        let values = self.program().eval(x0, theta)?;
        let frame = Frame::new(m, &values)?;
        let y = frame.standardize(delta, x0, x);
        let mut q = vec![1.0];
        if self.order() > 0 {
            let polys = self.group_polys(&frame.l, &frame.cov_inv);
            let h = polys.eval_all(&y);
            for k in 1..=self.order() {
                let coefs = self.group_coefficients(k, &values, &frame.d);
                q.push(coefs.iter().zip(&h[k - 1]).map(|(c, h)| c * h).sum());
            }
        }
        Ok(PointTerms {
            log_gaussian: frame.log_gaussian(&y),
            log_det_d: frame.det_d.ln(),
            q,
            y,
        })
    }
}
