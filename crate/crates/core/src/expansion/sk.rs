//! The index set `S_k` and the per-triple polynomials `Q_(l,r,j)`.
//!
//! This is the literal form of the correction terms, one triple at a time.
//! [`build_expansion`](super::build_expansion) computes the same sums through
//! the grouped plan; the two are compared in tests.

use std::fmt;

use super::density::ExpansionContext;
use super::operators::CoefficientTable;
use super::plan::derivative_poly;
use super::ExpansionError;
use crate::ito::{conditional_product_expectation, MultiIndex};
use crate::symbolic::Poly;

/// `(l, r, j)` with `r ∈ {1..m}^l` and `j` a composition of `k` into `l`
/// positive parts.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SkTriple {
    pub l: usize,
    pub r: Vec<usize>,
    pub j: Vec<usize>,
}

impl fmt::Display for SkTriple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |v: &[usize]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        write!(f, "({},({}),({}))", self.l, join(&self.r), join(&self.j))
    }
}

fn compositions(k: usize, l: usize) -> Vec<Vec<usize>> {
    if l == 1 {
        return vec![vec![k]];
    }
    let mut out = Vec::new();
    for first in 1..=k + 1 - l {
        for mut rest in compositions(k - first, l - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

fn tuples(m: usize, l: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..l {
        out = out
            .into_iter()
            .flat_map(|t| {
                (1..=m).map(move |r| {
                    let mut t = t.clone();
                    t.push(r);
                    t
                })
            })
            .collect();
    }
    out
}

/// All triples of `S_k`, ordered by `l`, then `r`, then `j`.
pub fn enumerate_sk(k: usize, m: usize) -> Vec<SkTriple> {
    assert!(k >= 1, "S_k is defined for k >= 1");
    let mut out = Vec::new();
    for l in 1..=k {
        let comps = compositions(k, l);
        for r in tuples(m, l) {
            for j in &comps {
                out.push(SkTriple {
                    l,
                    r: r.clone(),
                    j: j.clone(),
                });
            }
        }
    }
    out
}

/// `Q_(l,r,j)(y)`, the polynomial multiplying `φ_Σ(y)`.
pub fn correction_q(triple: &SkTriple, ctx: &ExpansionContext) -> Result<Poly<f64>, ExpansionError> {
    let model = ctx.model();
    let m = model.dim;
    let k: usize = triple.j.iter().sum();
    let table = CoefficientTable::build(model, k + 1);
    let theta = model.theta_map(ctx.theta());
    let frame = ctx.frame();
    // admissible (index, C_{i,r} D_rr) per position
    let mut choices: Vec<Vec<(MultiIndex, f64)>> = Vec::with_capacity(triple.l);
    for (&r, &j) in triple.r.iter().zip(&triple.j) {
        let mut opts = Vec::new();
        for i in MultiIndex::with_norm(j + 1, m as u8) {
            if let Some(c) = table.get(&i) {
                if !c[r - 1].is_zero() {
                    let v = c[r - 1].eval(ctx.x0(), &theta)?;
                    opts.push((i, v * frame.d[r - 1]));
                }
            }
        }
        choices.push(opts);
    }
    let components: Vec<usize> = triple.r.iter().map(|r| r - 1).collect();
    let mut fact = 1.0;
    for f in 2..=triple.l {
        fact *= f as f64;
    }
    let sign = if triple.l.is_multiple_of(2) { 1.0 } else { -1.0 };
    let mut q = Poly::zero(m);
    let mut pick = vec![0usize; triple.l];
    if choices.iter().any(Vec::is_empty) {
        return Ok(q);
    }
    loop {
        let list: Vec<MultiIndex> = pick
            .iter()
            .zip(&choices)
            .map(|(&p, c)| c[p].0.clone())
            .collect();
        let coef: f64 = pick.iter().zip(&choices).map(|(&p, c)| c[p].1).product();
        if coef != 0.0 {
            let p = conditional_product_expectation(&list, m);
            let h = derivative_poly(&p, &components, &frame.l, &frame.cov_inv);
            q = &q + &h.scale(&(sign * coef / fact));
        }
        // odometer over the choices
        let mut w = 0;
        loop {
            if w == pick.len() {
                return Ok(q);
            }
            pick[w] += 1;
            if pick[w] < choices[w].len() {
                break;
            }
            pick[w] = 0;
            w += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expansion::{build_expansion, ModelSpec};

    #[test]
    fn small_index_sets() {
        let s: Vec<String> = enumerate_sk(1, 2).iter().map(|t| t.to_string()).collect();
        assert_eq!(s, vec!["(1,(1),(1))", "(1,(2),(1))"]);
        let s: Vec<String> = enumerate_sk(2, 1).iter().map(|t| t.to_string()).collect();
        assert_eq!(s, vec!["(1,(1),(2))", "(2,(1,1),(1,1))"]);
        assert_eq!(enumerate_sk(2, 2).len(), 6);
    }

    #[test]
    fn sizes_match_brute_force() {
        for m in 1..=3usize {
            for k in 1..=5usize {
                // count m^l over compositions: sum_l C(k-1, l-1) m^l
                let mut want = 0usize;
                let mut binom = 1usize;
                for l in 1..=k {
                    want += binom * m.pow(l as u32);
                    binom = binom * (k - l) / l;
                }
                assert_eq!(enumerate_sk(k, m).len(), want, "k={k} m={m}");
            }
        }
    }

    #[test]
    fn triple_sums_match_grouped_assembly() {
        for (name, theta, x0) in [
            ("mrou", vec![0.5, 0.06, 0.03], vec![0.08]),
            ("sqr", vec![0.5, 0.06, 0.15], vec![0.07]),
            ("dmrou", vec![5.0, 1.0, 10.0, 0.0, 0.0], vec![0.3, -0.2]),
        ] {
            let model = ModelSpec::builtin(name).unwrap();
            let ctx = ExpansionContext::new(&model, &theta, &x0).unwrap();
            let e = build_expansion(&ctx, 3).unwrap();
            for k in 1..=3 {
                let mut q = Poly::zero(model.dim);
                for t in enumerate_sk(k, model.dim) {
                    q = &q + &correction_q(&t, &ctx).unwrap();
                }
                let diff = &q - &e.terms()[k].q;
                let scale = q.terms().map(|(_, c)| c.abs()).fold(1.0, f64::max);
                for (_, c) in diff.terms() {
                    assert!(c.abs() <= 1e-12 * scale, "{name} k={k}: {c}");
                }
            }
        }
    }

    #[test]
    fn empty_admissible_set_gives_zero() {
        let text = r#"
name = "bm"
dimension = 1
parameters = ["s"]
positive = ["s"]
[drift]
mu_1 = "0"
[dispersion]
sigma_1_1 = "s"
[state_space]
x1 = [-inf, inf]
"#;
        let model = ModelSpec::from_toml_str(text, "bm.toml").unwrap();
        let ctx = ExpansionContext::new(&model, &[0.2], &[0.0]).unwrap();
        for t in enumerate_sk(3, 1) {
            assert!(correction_q(&t, &ctx).unwrap().is_zero(), "{t}");
        }
    }
}
