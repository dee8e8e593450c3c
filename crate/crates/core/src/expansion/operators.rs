//! Drift correction, the first-order operators `A_0 .. A_m` and the
//! coefficient functions built by iterating them.

use std::collections::BTreeMap;

use super::model::ModelSpec;
use crate::ito::MultiIndex;
use crate::symbolic::Expr;

/// `b_i = μ_i - ½ Σ_k Σ_j σ_kj ∂σ_ij/∂x_k`, the drift of the equivalent
/// Stratonovich equation.
pub fn drift_correction_b(model: &ModelSpec) -> Vec<Expr> {
    let m = model.dim;
    (0..m)
        .map(|i| {
            let mut terms = vec![model.mu[i].clone()];
            for k in 0..m {
                for j in 0..m {
                    let d = model.sigma[i][j].differentiate(k);
                    if d.is_zero() || model.sigma[k][j].is_zero() {
                        continue;
                    }
                    terms.push(Expr::neg(Expr::mul([
                        Expr::constant(half()),
                        model.sigma[k][j].clone(),
                        d,
                    ])));
                }
            }
            Expr::add(terms)
        })
        .collect()
}

fn half() -> num_rational::BigRational {
    num_rational::BigRational::new(1.into(), 2.into())
}

/// The operators `A_0 = Σ b_i ∂_i` and `A_j = Σ σ_ij ∂_i`.
#[derive(Debug, Clone)]
pub struct Operators {
    dim: usize,
    /// `columns[0]` is `b`, `columns[j]` is the `j`-th dispersion column.
    columns: Vec<Vec<Expr>>,
}

impl Operators {
    pub fn new(model: &ModelSpec) -> Self {
        let m = model.dim;
        let mut columns = vec![drift_correction_b(model)];
        for j in 0..m {
            columns.push((0..m).map(|i| model.sigma[i][j].clone()).collect());
        }
        Operators { dim: m, columns }
    }

    /// Column `j` of `[b | σ]`.
    pub fn column(&self, j: usize) -> &[Expr] {
        &self.columns[j]
    }

    /// Applies `A_j` componentwise to a vector of expressions.
    pub fn apply(&self, j: usize, phi: &[Expr]) -> Vec<Expr> {
        phi.iter()
            .map(|f| {
                Expr::add((0..self.dim).filter_map(|i| {
                    let c = &self.columns[j][i];
                    if c.is_zero() {
                        return None;
                    }
                    let d = f.differentiate(i);
                    (!d.is_zero()).then(|| c.clone() * d)
                }))
            })
            .collect()
    }
}

/// `A_j(φ)` for a model, see [`Operators::apply`].
pub fn apply_operator(j: usize, phi: &[Expr], model: &ModelSpec) -> Vec<Expr> {
    Operators::new(model).apply(j, phi)
}

/// Symbolic coefficient vectors `C_i = A_{i_n}(..A_{i_2}(σ_{·i_1}))` for every
/// index up to a norm bound. Indices whose vector vanishes identically are
/// left out, together with all their extensions.
#[derive(Debug, Clone)]
pub struct CoefficientTable {
    entries: BTreeMap<MultiIndex, Vec<Expr>>,
}

impl CoefficientTable {
    pub fn build(model: &ModelSpec, max_norm: usize) -> Self {
        let ops = Operators::new(model);
        let m = model.dim as u8;
        let mut entries = BTreeMap::new();
        let mut frontier: Vec<(MultiIndex, Vec<Expr>)> = Vec::new();
        for i1 in 0..=m {
            let idx = MultiIndex::new(vec![i1]);
            if idx.norm() <= max_norm {
                let col = ops.column(i1 as usize).to_vec();
                if col.iter().any(|e| !e.is_zero()) {
                    frontier.push((idx, col));
                }
            }
        }
        while let Some((idx, c)) = frontier.pop() {
            for j in 0..=m {
                let w = if j == 0 { 2 } else { 1 };
                if idx.norm() + w > max_norm {
                    continue;
                }
                let next = ops.apply(j as usize, &c);
                if next.iter().any(|e| !e.is_zero()) {
                    let mut v = idx.entries().to_vec();
                    v.push(j);
                    frontier.push((MultiIndex::new(v), next));
                }
            }
            entries.insert(idx, c);
        }
        CoefficientTable { entries }
    }

    /// `C_i` (all `m` components), or `None` when it vanishes identically.
    pub fn get(&self, i: &MultiIndex) -> Option<&[Expr]> {
        self.entries.get(i).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&MultiIndex, &[Expr])> {
        self.entries.iter().map(|(k, v)| (k, v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn params(pairs: &[(&str, f64)]) -> HashMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn drift_corrections_of_benchmarks() {
        let mrou = ModelSpec::builtin("mrou").unwrap();
        assert_eq!(drift_correction_b(&mrou)[0], mrou.mu[0]);
        let dm = ModelSpec::builtin("dmrou").unwrap();
        assert_eq!(drift_correction_b(&dm), dm.mu);
        let sqr = ModelSpec::builtin("sqr").unwrap();
        let b = &drift_correction_b(&sqr)[0];
        let p = params(&[("kappa", 0.5), ("alpha", 0.06), ("sigma", 0.15)]);
        for x in [0.01, 0.06, 0.3] {
            let expected = 0.5 * (0.06 - x) - 0.15 * 0.15 / 4.0;
            assert!((b.eval(&[x], &p).unwrap() - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn operator_examples() {
        let mrou = ModelSpec::builtin("mrou").unwrap();
        let x = [Expr::var(0)];
        assert_eq!(apply_operator(1, &x, &mrou)[0], Expr::param("sigma"));
        assert_eq!(apply_operator(0, &x, &mrou)[0], mrou.mu[0]);
        let sqr = ModelSpec::builtin("sqr").unwrap();
        let a = apply_operator(1, &sqr.sigma[0], &sqr);
        let p = params(&[("sigma", 0.15)]);
        assert!((a[0].eval(&[0.06], &p).unwrap() - 0.01125).abs() < 1e-15);
    }

    #[test]
    fn coefficient_table_prunes_zeros() {
        let mrou = ModelSpec::builtin("mrou").unwrap();
        let t = CoefficientTable::build(&mrou, 4);
        assert!(t.get(&MultiIndex::new(vec![1, 1])).is_none());
        assert!(t.get(&MultiIndex::new(vec![0, 1])).is_some());
        assert!(t.get(&MultiIndex::new(vec![1, 0])).is_none());
        let p = params(&[("kappa", 0.5), ("alpha", 0.06), ("sigma", 0.03)]);
        let c = t.get(&MultiIndex::new(vec![0, 1])).unwrap();
        assert!((c[0].eval(&[0.1], &p).unwrap() + 0.5 * 0.03).abs() < 1e-15);
        let sqr = ModelSpec::builtin("sqr").unwrap();
        let t = CoefficientTable::build(&sqr, 3);
        let c = t.get(&MultiIndex::new(vec![1, 1])).unwrap();
        let p = params(&[("kappa", 0.5), ("alpha", 0.06), ("sigma", 0.15)]);
        assert!((c[0].eval(&[0.06], &p).unwrap() - 0.01125).abs() < 1e-15);
    }
}
