//! Diffusion model specifications and their TOML representation.
//!
//! ```toml
//! name = "sqr"
//! dimension = 1
//! parameters = ["kappa", "alpha", "sigma"]
//! positive = ["kappa", "alpha", "sigma"]     # optional
//! constraints = ["2*kappa*alpha - sigma^2"]  # optional, each must be > 0
//!
//! [drift]
//! mu_1 = "kappa*(alpha - x1)"
//!
//! [dispersion]                               # missing entries are zero
//! sigma_1_1 = "sigma*sqrt(x1)"
//!
//! [state_space]                              # optional, default (-inf, inf)
//! x1 = [0.0, inf]
//!
//! [lamperti]                                 # optional, one-dimensional only
//! gamma = "2*sqrt(x1)/sigma"
//! gamma_inv = "sigma^2*x1^2/4"
//! ```

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;
use toml::Spanned;

use crate::symbolic::{parse_expr, EvalError, Expr};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{source_name}:{line}:{column}: {message}")]
    Syntax {
        source_name: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{source_name}: {message}")]
    Invalid { source_name: String, message: String },
    #[error("unknown built-in model `{0}` (expected mrou, sqr or dmrou)")]
    UnknownBuiltin(String),
    #[error("cannot read model file {path}: {message}")]
    Io { path: String, message: String },
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Lamperti pair for a one-dimensional model: `z = γ(x)` and `x = γ⁻¹(z)`,
/// both written in terms of `x1`.
#[derive(Debug, Clone)]
pub struct Lamperti {
    pub gamma: Expr,
    pub gamma_inv: Expr,
}

#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub name: String,
    pub dim: usize,
    pub params: Vec<String>,
    /// Parameters restricted to `(0, inf)` during estimation.
    pub positive: Vec<String>,
    pub mu: Vec<Expr>,
    /// Row-major `dim x dim` dispersion matrix.
    pub sigma: Vec<Vec<Expr>>,
    pub state_space: Vec<(f64, f64)>,
    pub lamperti: Option<Lamperti>,
    /// Expressions in the parameters that must be strictly positive.
    pub constraints: Vec<Expr>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    name: String,
    dimension: usize,
    parameters: Vec<String>,
    #[serde(default)]
    positive: Vec<String>,
    #[serde(default)]
    constraints: Vec<Spanned<String>>,
    drift: BTreeMap<String, Spanned<String>>,
    #[serde(default)]
    dispersion: BTreeMap<String, Spanned<String>>,
    #[serde(default)]
    state_space: BTreeMap<String, [f64; 2]>,
    lamperti: Option<RawLamperti>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLamperti {
    gamma: Spanned<String>,
    gamma_inv: Spanned<String>,
}

const BUILTINS: [(&str, &str); 3] = [
    ("mrou", include_str!("../../models/mrou.toml")),
    ("sqr", include_str!("../../models/sqr.toml")),
    ("dmrou", include_str!("../../models/dmrou.toml")),
];

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

impl ModelSpec {
    pub fn builtin(name: &str) -> Result<ModelSpec, ModelError> {
        let (_, text) = BUILTINS
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(name))
            .ok_or_else(|| ModelError::UnknownBuiltin(name.to_string()))?;
        ModelSpec::from_toml_str(text, name)
    }

    /// TOML source of a built-in model.
    pub fn builtin_source(name: &str) -> Option<&'static str> {
        BUILTINS
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(name))
            .map(|(_, t)| *t)
    }

    pub fn from_file(path: &Path) -> Result<ModelSpec, ModelError> {
        let text = std::fs::read_to_string(path).map_err(|e| ModelError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        ModelSpec::from_toml_str(&text, &path.display().to_string())
    }

    pub fn from_toml_str(text: &str, source_name: &str) -> Result<ModelSpec, ModelError> {
        let raw: RawModel = toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map_or((1, 1), |s| line_col(text, s.start));
            ModelError::Syntax {
                source_name: source_name.to_string(),
                line,
                column,
                message: e.message().to_string(),
            }
        })?;
        let invalid = |message: String| ModelError::Invalid {
            source_name: source_name.to_string(),
            message,
        };
        let m = raw.dimension;
        if m == 0 || m > 9 {
            return Err(invalid(format!("dimension must be between 1 and 9, got {m}")));
        }
        let parse = |s: &Spanned<String>| -> Result<Expr, ModelError> {
            parse_expr(s.get_ref(), m).map_err(|e| {
                // the span includes the opening quote
                let (line, column) = line_col(text, s.span().start + 1);
                ModelError::Syntax {
                    source_name: source_name.to_string(),
                    line,
                    column: column + e.column - 1,
                    message: e.message,
                }
            })
        };

        let mut mu = Vec::with_capacity(m);
        for i in 1..=m {
            let key = format!("mu_{i}");
            let s = raw
                .drift
                .get(&key)
                .ok_or_else(|| invalid(format!("missing drift entry `{key}`")))?;
            mu.push(parse(s)?);
        }
        if let Some(extra) = raw.drift.keys().find(|k| !drift_key_ok(k, m)) {
            return Err(invalid(format!("unexpected drift entry `{extra}`")));
        }

        let mut sigma = vec![vec![Expr::zero(); m]; m];
        for (key, s) in &raw.dispersion {
            let (i, j) = dispersion_key(key, m)
                .ok_or_else(|| invalid(format!("unexpected dispersion entry `{key}`")))?;
            sigma[i][j] = parse(s)?;
        }

        let mut state_space = vec![(f64::NEG_INFINITY, f64::INFINITY); m];
        for (key, [lo, hi]) in &raw.state_space {
            let i = state_key(key, m)
                .ok_or_else(|| invalid(format!("unexpected state-space entry `{key}`")))?;
            if lo.is_nan() || hi.is_nan() || lo >= hi {
                return Err(invalid(format!("empty state interval for `{key}`")));
            }
            state_space[i] = (*lo, *hi);
        }

        let constraints = raw
            .constraints
            .iter()
            .map(&parse)
            .collect::<Result<Vec<_>, _>>()?;

        let lamperti = match &raw.lamperti {
            None => None,
            Some(l) => {
                if m != 1 {
                    return Err(invalid("a Lamperti transform needs a one-dimensional model".into()));
                }
                Some(Lamperti {
                    gamma: parse(&l.gamma)?,
                    gamma_inv: parse(&l.gamma_inv)?,
                })
            }
        };

        let spec = ModelSpec {
            name: raw.name,
            dim: m,
            params: raw.parameters,
            positive: raw.positive,
            mu,
            sigma,
            state_space,
            lamperti,
            constraints,
        };
        spec.validate().map_err(invalid)?;
        Ok(spec)
    }

    fn validate(&self) -> Result<(), String> {
        let mut seen = std::collections::HashSet::new();
        for p in &self.params {
            if !seen.insert(p) {
                return Err(format!("parameter `{p}` declared twice"));
            }
        }
        for p in &self.positive {
            if !self.params.contains(p) {
                return Err(format!("positive parameter `{p}` is not declared"));
            }
        }
        let mut used = Vec::new();
        for e in self.all_exprs() {
            e.collect_params(&mut used);
        }
        for p in &used {
            if !self.params.contains(p) {
                return Err(format!("undeclared parameter `{p}`"));
            }
        }
        for c in &self.constraints {
            if !c.is_state_free() {
                return Err(format!("constraint `{c}` refers to state variables"));
            }
        }
        Ok(())
    }

    fn all_exprs(&self) -> impl Iterator<Item = &Expr> {
        self.mu
            .iter()
            .chain(self.sigma.iter().flatten())
            .chain(self.constraints.iter())
            .chain(self.lamperti.iter().flat_map(|l| [&l.gamma, &l.gamma_inv]))
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p == name)
    }

    pub fn theta_map(&self, theta: &[f64]) -> HashMap<String, f64> {
        self.params.iter().cloned().zip(theta.iter().copied()).collect()
    }

    /// Checks length, positivity and declared constraints.
    pub fn check_theta(&self, theta: &[f64]) -> Result<(), ModelError> {
        if theta.len() != self.params.len() {
            return Err(ModelError::InvalidParameters(format!(
                "expected {} values ({}), got {}",
                self.params.len(),
                self.params.join(", "),
                theta.len()
            )));
        }
        for (p, v) in self.params.iter().zip(theta) {
            if !v.is_finite() {
                return Err(ModelError::InvalidParameters(format!("{p} = {v} is not finite")));
            }
            if self.positive.contains(p) && *v <= 0.0 {
                return Err(ModelError::InvalidParameters(format!("{p} must be positive, got {v}")));
            }
        }
        let map = self.theta_map(theta);
        for c in &self.constraints {
            let v = c.eval(&[], &map)?;
            if v.is_nan() || v <= 0.0 {
                return Err(ModelError::InvalidParameters(format!("constraint {c} > 0 violated ({v})")));
            }
        }
        Ok(())
    }

    pub fn in_state_space(&self, x: &[f64]) -> bool {
        x.len() == self.dim
            && x.iter()
                .zip(&self.state_space)
                .all(|(v, (lo, hi))| v > lo && v < hi)
    }
}

fn drift_key_ok(key: &str, m: usize) -> bool {
    key.strip_prefix("mu_")
        .and_then(|s| s.parse::<usize>().ok())
        .is_some_and(|i| (1..=m).contains(&i))
}

fn dispersion_key(key: &str, m: usize) -> Option<(usize, usize)> {
    let rest = key.strip_prefix("sigma_")?;
    let (a, b) = rest.split_once('_')?;
    let i: usize = a.parse().ok()?;
    let j: usize = b.parse().ok()?;
    ((1..=m).contains(&i) && (1..=m).contains(&j)).then(|| (i - 1, j - 1))
}

fn state_key(key: &str, m: usize) -> Option<usize> {
    let i: usize = key.strip_prefix('x')?.parse().ok()?;
    (1..=m).contains(&i).then(|| i - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_load() {
        let m = ModelSpec::builtin("mrou").unwrap();
        assert_eq!(m.dim, 1);
        assert_eq!(m.mu[0].to_string(), "kappa*(alpha - x1)");
        assert!(m.lamperti.is_some());
        let s = ModelSpec::builtin("SQR").unwrap();
        assert_eq!(s.constraints.len(), 1);
        assert_eq!(s.state_space[0], (0.0, f64::INFINITY));
        let d = ModelSpec::builtin("dmrou").unwrap();
        assert_eq!(d.dim, 2);
        assert!(d.sigma[0][1].is_zero());
        assert!(ModelSpec::builtin("heston").is_err());
    }

    #[test]
    fn theta_checks() {
        let s = ModelSpec::builtin("sqr").unwrap();
        assert!(s.check_theta(&[0.5, 0.06, 0.15]).is_ok());
        // Feller condition fails
        assert!(s.check_theta(&[0.5, 0.01, 0.15]).is_err());
        assert!(s.check_theta(&[-0.5, 0.06, 0.15]).is_err());
        assert!(s.check_theta(&[0.5, 0.06]).is_err());
    }

    #[test]
    fn expression_errors_point_into_the_file() {
        let text = "name = \"bad\"\ndimension = 1\nparameters = [\"k\"]\n[drift]\nmu_1 = \"k*(1 - x1\"\n";
        let err = ModelSpec::from_toml_str(text, "bad.toml").unwrap_err();
        match err {
            ModelError::Syntax { line, column, .. } => {
                assert_eq!(line, 5);
                assert_eq!(column, 18);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn toml_errors_have_positions() {
        let err = ModelSpec::from_toml_str("name = \n", "x.toml").unwrap_err();
        assert!(matches!(err, ModelError::Syntax { line: 1, .. }), "{err}");
        let text = "name = \"a\"\ndimension = 1\nparameters = []\n[drift]\nmu_1 = \"k*x1\"\n";
        let err = ModelSpec::from_toml_str(text, "a.toml").unwrap_err();
        assert!(err.to_string().contains("undeclared parameter `k`"));
    }
}
