//! Conditional expectations of products of iterated integrals through the
//! heat equation.
//!
//! For a finite family of iterated integrals `K_1 .. K_l` (each the suffix of
//! some index still to be integrated) put
//! `G(t, x) = E[K_1(t) ... K_l(t) ; W(t) ∈ dx] / dx`. Itô's formula applied
//! to the product and to a test function of `W(t)` gives
//! `∂_t G = ½ ΔG + source`, where the source collects lower families:
//!
//! * an outer `dt` removed: `+ G'`
//! * an outer `dW_v` removed: `- ∂_v G'` (integration by parts)
//! * two outer `dW_v` removed from different factors: `+ G''` (covariation)
//! * Stratonovich only, two leading equal `dW_v` in one factor: `+ ½ G''`
//!
//! With `G(0) = 0` Duhamel's formula integrates the source against the heat
//! semigroup, which maps `∂^α φ_s` to `∂^α φ_t`. By Brownian scaling every
//! coefficient of `∂^α φ_t` carries the power `t^q` with
//! `q = (Σ norms + |α|) / 2`, so at `t = 1` the time integral reduces to a
//! division by `q`. Dividing `G(1, z)` by `φ(z)` turns `∂^α φ` into
//! `(-1)^|α| He_α(z)` (probabilists' Hermite polynomials).

use std::collections::{BTreeMap, HashMap};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};

use super::index::{norm, Flavor, MultiIndex};
use crate::symbolic::{Monomial, QPoly};

type Coeffs = BTreeMap<Vec<u32>, BigRational>;

struct Solver {
    flavor: Flavor,
    m: usize,
    memo: HashMap<Vec<Vec<u8>>, Coeffs>,
}

impl Solver {
    fn solve(&mut self, state: &[Vec<u8>]) -> Coeffs {
        if let Some(hit) = self.memo.get(state) {
            return hit.clone();
        }
        let mut out = Coeffs::new();
        if state.is_empty() {
            out.insert(vec![0; self.m], BigRational::one());
            return out;
        }
        let mut source = Coeffs::new();
        let add = |src: &mut Coeffs, child: &Coeffs, shift: Option<u8>, c: &BigRational| {
            for (alpha, v) in child {
                let mut a = alpha.clone();
                if let Some(s) = shift {
                    a[s as usize - 1] += 1;
                }
                let slot = src.entry(a).or_insert_with(BigRational::zero);
                *slot += v * c;
            }
        };
        let one = BigRational::one();
        let minus_one = -BigRational::one();
        let half = BigRational::new(BigInt::from(1), BigInt::from(2));
        for w in 0..state.len() {
            // identical factors give identical children
            if w > 0 && state[w] == state[w - 1] {
                continue;
            }
            let same = state.iter().filter(|s| **s == state[w]).count();
            let weight = BigRational::from_integer(BigInt::from(same));
            let v = state[w][0];
            let child = self.solve(&advance(state, &[(w, 1)]));
            if v == 0 {
                add(&mut source, &child, None, &weight);
            } else {
                add(&mut source, &child, Some(v), &(&minus_one * &weight));
                if self.flavor == Flavor::Stratonovich && state[w].get(1) == Some(&v) {
                    let child = self.solve(&advance(state, &[(w, 2)]));
                    add(&mut source, &child, None, &(&half * &weight));
                }
            }
        }
        for w in 0..state.len() {
            let v = state[w][0];
            if v == 0 {
                continue;
            }
            for w2 in w + 1..state.len() {
                if state[w2][0] == v {
                    let child = self.solve(&advance(state, &[(w, 1), (w2, 1)]));
                    add(&mut source, &child, None, &one);
                }
            }
        }
        let total: usize = state.iter().map(|s| norm(s)).sum();
        for (alpha, v) in source {
            if v.is_zero() {
                continue;
            }
            let size: u32 = alpha.iter().sum();
            let q = BigRational::new(BigInt::from(total as u64 + size as u64), BigInt::from(2));
            out.insert(alpha, v / q);
        }
        self.memo.insert(state.to_vec(), out.clone());
        out
    }
}

/// Removes leading entries and re-sorts, dropping exhausted factors.
fn advance(state: &[Vec<u8>], cuts: &[(usize, usize)]) -> Vec<Vec<u8>> {
    let mut next: Vec<Vec<u8>> = state
        .iter()
        .enumerate()
        .filter_map(|(k, s)| {
            let cut = cuts.iter().find(|(w, _)| *w == k).map_or(0, |(_, c)| *c);
            let rest = &s[cut..];
            (!rest.is_empty()).then(|| rest.to_vec())
        })
        .collect();
    next.sort();
    next
}

/// Probabilists' Hermite polynomials `He_0 .. He_n` in one variable.
fn hermite(n: usize) -> Vec<Vec<BigInt>> {
    let mut h: Vec<Vec<BigInt>> = vec![vec![BigInt::one()]];
    if n >= 1 {
        h.push(vec![BigInt::zero(), BigInt::one()]);
    }
    for k in 1..n {
        let mut next = vec![BigInt::zero(); k + 2];
        for (d, c) in h[k].iter().enumerate() {
            next[d + 1] += c;
        }
        for (d, c) in h[k - 1].iter().enumerate() {
            next[d] -= c * BigInt::from(k);
        }
        h.push(next);
    }
    h
}

/// `E(K_1(1) ... K_l(1) | W(1) = z)` for a family of iterated integrals of the
/// given flavor. An empty family gives the constant 1.
pub(crate) fn product_expectation(list: &[MultiIndex], m: usize, flavor: Flavor) -> QPoly {
    let mut state: Vec<Vec<u8>> = list
        .iter()
        .filter(|i| !i.is_empty())
        .map(|i| i.entries().to_vec())
        .collect();
    state.sort();
    let mut solver = Solver {
        flavor,
        m,
        memo: HashMap::new(),
    };
    let coeffs = solver.solve(&state);
    let top = coeffs
        .keys()
        .flat_map(|a| a.iter().copied())
        .max()
        .unwrap_or(0) as usize;
    let he = hermite(top);
    let mut poly = QPoly::zero(m);
    for (alpha, c) in coeffs {
        let size: u32 = alpha.iter().sum();
        let sign = if size.is_multiple_of(2) { c } else { -c };
        // expand prod_v He_{alpha_v}(z_v)
        let mut terms: Vec<(Vec<u32>, BigInt)> = vec![(vec![0; m], BigInt::one())];
        for (v, &a) in alpha.iter().enumerate() {
            let mut next = Vec::new();
            for (mono, coef) in &terms {
                for (d, hc) in he[a as usize].iter().enumerate() {
                    if hc.is_zero() {
                        continue;
                    }
                    let mut mm = mono.clone();
                    mm[v] = d as u32;
                    next.push((mm, coef * hc));
                }
            }
            terms = next;
        }
        for (mono, coef) in terms {
            poly.add_term(Monomial(mono), &sign * BigRational::from_integer(coef));
        }
    }
    poly
}
