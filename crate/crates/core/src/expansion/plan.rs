//! Model-level precomputation for the density expansion.
//!
//! The correction `Ω_k / φ_Σ` is a sum over sequences of pairs `(i_ω, r_ω)`
//! with `Σ (‖i_ω‖ - 1) = k`, each weighted by `(-1)^l / l!`. The summand is
//! symmetric in the sequence, so it is enough to visit multisets of pairs and
//! multiply by the number of orderings, which turns the weight into
//! `(-1)^l / Π mult!`. The polynomial part only depends on the multiset of
//! indices and the multiset of components, so terms are grouped on that key
//! and each group needs one conditional expectation `P`.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex, OnceLock, RwLock};

use rayon::prelude::*;

use super::model::ModelSpec;
use super::operators::{drift_correction_b, CoefficientTable};
use super::ExpansionError;
use crate::ito::{conditional_product_expectation, MultiIndex};
use crate::symbolic::{Expr, Poly, Program, QPoly};

/// Highest order a plan can be built for.
pub const MAX_ORDER: usize = 8;

/// One `(i, r)` factor: the `r`-th component (0-based) of `C_i`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Pair {
    pub index: MultiIndex,
    pub r: usize,
}

impl Pair {
    fn weight(&self) -> usize {
        self.index.norm() - 1
    }
}

/// Terms sharing the polynomial `𝒟_R P_I`.
#[derive(Debug, Clone)]
pub struct Group {
    /// Sorted indices `I`.
    pub indices: Vec<MultiIndex>,
    /// Sorted components `R` (0-based) the derivatives act on.
    pub components: Vec<usize>,
    /// `P_I(z)`.
    pub p: Arc<QPoly>,
    /// `(weight, pair ids)`; the group coefficient is
    /// `Σ weight Π C_pair D_pair`.
    pub terms: Vec<(f64, Vec<usize>)>,
}

/// Polynomials `𝒟_R P_I(L y)` of every group for one `(L, Σ^{-1})`.
#[derive(Debug)]
pub struct GroupPolys {
    /// `polys[k - 1][g]`.
    pub polys: Vec<Vec<Poly<f64>>>,
    dense: Vec<Vec<DensePoly>>,
    max_degree: usize,
}

#[derive(Debug)]
struct DensePoly {
    exps: Vec<u32>,
    coefs: Vec<f64>,
}

const H_CACHE_CAP: usize = 64;

/// Everything about an expansion that does not depend on `θ` or `x_0`.
#[derive(Debug)]
pub struct ExpansionPlan {
    model: ModelSpec,
    order: usize,
    /// Outputs: `σ` row-major, then `b`, then one slot per pair.
    program: Program,
    pairs: Vec<Pair>,
    groups: Vec<Vec<Group>>,
    h_cache: RwLock<HashMap<Vec<u64>, Arc<GroupPolys>>>,
}

fn multiplicity_weight(counts: &[usize], l: usize) -> f64 {
    let mut w = if l.is_multiple_of(2) { 1.0 } else { -1.0 };
    for &c in counts {
        for f in 2..=c {
            w /= f as f64;
        }
    }
    w
}

/// All nondecreasing sequences of pair ids with total weight `k`.
fn multisets(weights: &[usize], k: usize) -> Vec<Vec<usize>> {
    fn go(weights: &[usize], start: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if left == 0 {
            out.push(cur.clone());
            return;
        }
        for p in start..weights.len() {
            if weights[p] <= left {
                cur.push(p);
                go(weights, p, left - weights[p], cur, out);
                cur.pop();
            }
        }
    }
    let mut out = Vec::new();
    go(weights, 0, k, &mut Vec::new(), &mut out);
    out
}

impl ExpansionPlan {
    /// Builds the plan for orders `0..=order`.
    pub fn new(model: &ModelSpec, order: usize) -> Result<ExpansionPlan, ExpansionError> {
        if order > MAX_ORDER {
            return Err(ExpansionError::OrderTooLarge {
                order,
                max: MAX_ORDER,
            });
        }
        let m = model.dim;
        let table = CoefficientTable::build(model, order + 1);
        let mut pairs: Vec<Pair> = Vec::new();
        let mut exprs: Vec<Expr> = model.sigma.iter().flatten().cloned().collect();
        exprs.extend(drift_correction_b(model));
        let mut entries: Vec<(&MultiIndex, &[Expr])> =
            table.iter().filter(|(i, _)| i.norm() >= 2).collect();
        entries.sort_by(|a, b| (a.0.norm(), a.0).cmp(&(b.0.norm(), b.0)));
        for (index, c) in entries {
            for (r, e) in c.iter().enumerate() {
                if !e.is_zero() {
                    pairs.push(Pair {
                        index: index.clone(),
                        r,
                    });
                    exprs.push(e.clone());
                }
            }
        }
        let program = Program::compile(&exprs, &model.params)?;
        let weights: Vec<usize> = pairs.iter().map(Pair::weight).collect();

        let mut groups = Vec::with_capacity(order);
        for k in 1..=order {
            let mut keyed: BTreeMap<(Vec<MultiIndex>, Vec<usize>), Vec<(f64, Vec<usize>)>> =
                BTreeMap::new();
            for set in multisets(&weights, k) {
                let mut counts = Vec::new();
                let mut run = 1;
                for w in 1..set.len() {
                    if set[w] == set[w - 1] {
                        run += 1;
                    } else {
                        counts.push(run);
                        run = 1;
                    }
                }
                counts.push(run);
                let weight = multiplicity_weight(&counts, set.len());
                let mut indices: Vec<MultiIndex> =
                    set.iter().map(|&p| pairs[p].index.clone()).collect();
                indices.sort();
                let mut comps: Vec<usize> = set.iter().map(|&p| pairs[p].r).collect();
                comps.sort_unstable();
                keyed.entry((indices, comps)).or_default().push((weight, set));
            }
            let keyed: Vec<_> = keyed.into_iter().collect();
            let built: Vec<Group> = keyed
                .into_par_iter()
                .map(|((indices, components), terms)| Group {
                    p: conditional_product_expectation(&indices, m),
                    indices,
                    components,
                    terms,
                })
                .collect();
            groups.push(built);
        }
        Ok(ExpansionPlan {
            model: model.clone(),
            order,
            program,
            pairs,
            groups,
            h_cache: RwLock::new(HashMap::new()),
        })
    }

    /// Shared plan for a model and order, built on first use.
    pub fn cached(model: &ModelSpec, order: usize) -> Result<Arc<ExpansionPlan>, ExpansionError> {
        static CACHE: OnceLock<Mutex<HashMap<(String, usize), Arc<ExpansionPlan>>>> =
            OnceLock::new();
        let key = (fingerprint(model), order);
        let cache = CACHE.get_or_init(Default::default);
        // held while building so concurrent callers do not duplicate work
        let mut guard = cache.lock().expect("plan cache lock");
        if let Some(plan) = guard.get(&key) {
            return Ok(plan.clone());
        }
        let plan = Arc::new(ExpansionPlan::new(model, order)?);
        guard.insert(key, plan.clone());
        Ok(plan)
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    /// Groups contributing to `Ω_k`, `k >= 1`.
    pub fn groups(&self, k: usize) -> &[Group] {
        &self.groups[k - 1]
    }

    pub(crate) fn program(&self) -> &Program {
        &self.program
    }

    /// Offset of the first pair value in the program output.
    pub(crate) fn pair_offset(&self) -> usize {
        self.model.dim * (self.model.dim + 1)
    }

    /// Group coefficients `Σ weight Π C D` for order `k`.
    pub(crate) fn group_coefficients(&self, k: usize, values: &[f64], d: &[f64]) -> Vec<f64> {
        let off = self.pair_offset();
        let factor: Vec<f64> = self
            .pairs
            .iter()
            .enumerate()
            .map(|(p, pair)| values[off + p] * d[pair.r])
            .collect();
        self.groups(k)
            .iter()
            .map(|g| {
                g.terms
                    .iter()
                    .map(|(w, ids)| w * ids.iter().map(|&p| factor[p]).product::<f64>())
                    .sum()
            })
            .collect()
    }

    /// Group polynomials for the given `L = σ^{-1} D^{-1}` and `Σ^{-1}`,
    /// cached on their exact bit patterns.
    pub(crate) fn group_polys(&self, l: &[Vec<f64>], sigma_inv: &[Vec<f64>]) -> Arc<GroupPolys> {
        let key: Vec<u64> = l
            .iter()
            .chain(sigma_inv)
            .flatten()
            .map(|v| v.to_bits())
            .collect();
        if let Some(hit) = self.h_cache.read().expect("h cache lock").get(&key) {
            return hit.clone();
        }
        let m = self.model.dim;
        let polys: Vec<Vec<Poly<f64>>> = self
            .groups
            .iter()
            .map(|gs| {
                gs.iter()
                    .map(|g| derivative_poly(&g.p, &g.components, l, sigma_inv))
                    .collect()
            })
            .collect();
        let mut max_degree = 0;
        let dense = polys
            .iter()
            .map(|ps| {
                ps.iter()
                    .map(|p| {
                        let mut exps = Vec::with_capacity(p.len() * m);
                        let mut coefs = Vec::with_capacity(p.len());
                        for (mono, c) in p.terms() {
                            for &e in &mono.0 {
                                max_degree = max_degree.max(e as usize);
                            }
                            exps.extend_from_slice(&mono.0);
                            coefs.push(*c);
                        }
                        DensePoly { exps, coefs }
                    })
                    .collect()
            })
            .collect();
        let out = Arc::new(GroupPolys {
            polys,
            dense,
            max_degree,
        });
        let mut cache = self.h_cache.write().expect("h cache lock");
        if cache.len() >= H_CACHE_CAP {
            cache.clear();
        }
        cache.insert(key, out.clone());
        out
    }
}

impl GroupPolys {
    /// Values of every group polynomial of order `k` at `y`.
    pub(crate) fn eval_all(&self, y: &[f64]) -> Vec<Vec<f64>> {
        let m = y.len();
        let powers: Vec<Vec<f64>> = y
            .iter()
            .map(|&v| {
                let mut p = Vec::with_capacity(self.max_degree + 1);
                let mut acc = 1.0;
                for _ in 0..=self.max_degree {
                    p.push(acc);
                    acc *= v;
                }
                p
            })
            .collect();
        self.dense
            .iter()
            .map(|ps| {
                ps.iter()
                    .map(|p| {
                        p.coefs
                            .iter()
                            .enumerate()
                            .map(|(t, c)| {
                                let e = &p.exps[t * m..(t + 1) * m];
                                e.iter()
                                    .enumerate()
                                    .fold(*c, |acc, (i, &k)| acc * powers[i][k as usize])
                            })
                            .sum()
                    })
                    .collect()
            })
            .collect()
    }
}

/// `𝒟_{r_1} .. 𝒟_{r_l} [P(L y)]` with `𝒟_i u = ∂_i u - u (Σ^{-1} y)_i`.
pub(crate) fn derivative_poly(
    p: &QPoly,
    components: &[usize],
    l: &[Vec<f64>],
    sigma_inv: &[Vec<f64>],
) -> Poly<f64> {
    let m = l.len();
    let mut u = p.to_f64().linear_substitute(l);
    for &r in components {
        let lin = Poly::from_terms(
            m,
            (0..m).map(|b| (crate::symbolic::Monomial::var(m, b), sigma_inv[r][b])),
        );
        u = &u.diff(r) - &(&u * &lin);
    }
    u
}

fn fingerprint(model: &ModelSpec) -> String {
    let mut s = format!("{}|{}|{}", model.name, model.dim, model.params.join(","));
    for e in model.mu.iter().chain(model.sigma.iter().flatten()) {
        s.push('|');
        s.push_str(&e.to_string());
    }
    s
}
