//! Conditional expectations given the terminal value `W(1) = z`.
//!
//! Conditionally on `W(1) = z` the path has the law of
//! `B(t) - t B(1) + t z` for a Brownian motion `B`, so every `dW_k` becomes
//! `dB_k - B_k(1) dt + z_k dt`. Expanding an iterated integral this way leaves
//! terms `z^a * prod B_s(1) * I_j(1)` with `I_j` driven by `B`; the random
//! part is reduced by writing each `B_s(1)` as the single integral `I_(s)(1)`,
//! multiplying out and taking unconditional expectations.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock, RwLock};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;

use super::algebra::{combination_product, factorial, strat_to_ito, times_single, Counts};
use super::heat::product_expectation;
use super::index::{Flavor, MultiIndex};
use crate::symbolic::{Monomial, QPoly};

type Cache<K, V> = OnceLock<RwLock<HashMap<K, V>>>;

fn cached<K: std::hash::Hash + Eq + Clone, V: Clone>(
    cache: &'static Cache<K, V>,
    key: K,
    compute: impl FnOnce() -> V,
) -> V {
    let lock = cache.get_or_init(Default::default);
    if let Some(v) = lock.read().expect("cache lock").get(&key) {
        return v.clone();
    }
    let v = compute();
    lock.write().expect("cache lock").insert(key, v.clone());
    v
}

/// Whether a product of the remaining singles can still turn `key` into an
/// all-time index: each single adds or removes one entry of its coordinate.
fn reachable(key: &[u8], remaining: &[usize]) -> bool {
    let mut counts = vec![0usize; remaining.len()];
    for &e in key {
        if e != 0 {
            let e = e as usize;
            if e >= counts.len() {
                return false;
            }
            counts[e] += 1;
        }
    }
    counts
        .iter()
        .zip(remaining)
        .skip(1)
        .all(|(&c, &r)| c <= r && (r - c) % 2 == 0)
}

/// `E[B_{s_1}(1) ... B_{s_r}(1) I_j(1)]` for sorted `singles`.
fn moment(singles: &[u8], j: &[u8]) -> BigRational {
    static CACHE: Cache<(Vec<u8>, Vec<u8>), BigRational> = OnceLock::new();
    cached(&CACHE, (singles.to_vec(), j.to_vec()), || {
        let top = singles
            .iter()
            .chain(j)
            .copied()
            .max()
            .unwrap_or(0) as usize;
        let mut remaining = vec![0usize; top + 1];
        for &s in singles {
            remaining[s as usize] += 1;
        }
        if !reachable(j, &remaining) {
            return BigRational::zero();
        }
        let mut counts = Counts::new();
        counts.insert(j.to_vec(), 1);
        for &s in singles {
            remaining[s as usize] -= 1;
            let rem = remaining.clone();
            counts = times_single(&counts, s, |k| reachable(k, &rem));
        }
        let mut acc = BigRational::zero();
        for (k, c) in &counts {
            if k.iter().all(|&e| e == 0) {
                acc += BigRational::new(BigInt::from(*c), factorial(k.len()));
            }
        }
        acc
    })
}

/// `E(I_i(1) | W(1) = z)` as an exact polynomial in `z_1 .. z_m`.
pub fn bridge_conditional_expectation(i: &MultiIndex, m: usize) -> Arc<QPoly> {
    static CACHE: Cache<(MultiIndex, usize), Arc<QPoly>> = OnceLock::new();
    assert!(
        i.max_coordinate() as usize <= m,
        "index {i} exceeds dimension {m}"
    );
    cached(&CACHE, (i.clone(), m), || Arc::new(bridge_poly(i.entries(), m)))
}

#[derive(Clone, PartialEq, Eq, Hash)]
struct State {
    z: Vec<u32>,
    singles: Vec<u8>,
    built: Vec<u8>,
}

fn bridge_poly(entries: &[u8], m: usize) -> QPoly {
    let mut states: HashMap<State, i128> = HashMap::new();
    states.insert(
        State {
            z: vec![0; m],
            singles: Vec::new(),
            built: Vec::new(),
        },
        1,
    );
    // nonzero entries still to be processed, per coordinate
    let mut ahead = vec![0usize; m + 1];
    for &e in entries {
        ahead[e as usize] += 1;
    }
    for &v in entries.iter().rev() {
        ahead[v as usize] -= 1;
        let mut next: HashMap<State, i128> = HashMap::with_capacity(states.len() * 3);
        let mut push = |s: State, c: i128| {
            // entries of built can only be cancelled by singles, present or future
            let ok = (1..=m).all(|coord| {
                let have = s.built.iter().filter(|&&e| e as usize == coord).count();
                let sing = s.singles.iter().filter(|&&e| e as usize == coord).count();
                have <= sing + ahead[coord]
            });
            if ok {
                *next.entry(s).or_insert(0) += c;
            }
        };
        for (s, c) in states {
            let mut built0 = Vec::with_capacity(s.built.len() + 1);
            built0.push(0);
            built0.extend_from_slice(&s.built);
            if v == 0 {
                push(
                    State {
                        built: built0,
                        ..s
                    },
                    c,
                );
                continue;
            }
            let mut kept = Vec::with_capacity(s.built.len() + 1);
            kept.push(v);
            kept.extend_from_slice(&s.built);
            push(
                State {
                    built: kept,
                    ..s.clone()
                },
                c,
            );
            let mut singles = s.singles.clone();
            let at = singles.partition_point(|&e| e <= v);
            singles.insert(at, v);
            push(
                State {
                    z: s.z.clone(),
                    singles,
                    built: built0.clone(),
                },
                -c,
            );
            let mut z = s.z;
            z[v as usize - 1] += 1;
            push(
                State {
                    z,
                    singles: s.singles,
                    built: built0,
                },
                c,
            );
        }
        states = next;
    }
    let mut poly = QPoly::zero(m);
    let mut keys: Vec<(State, i128)> = states.into_iter().filter(|(_, c)| *c != 0).collect();
    keys.sort_by(|a, b| (&a.0.z, &a.0.singles, &a.0.built).cmp(&(&b.0.z, &b.0.singles, &b.0.built)));
    for (s, c) in keys {
        let e = moment(&s.singles, &s.built);
        if e.is_zero() {
            continue;
        }
        poly.add_term(Monomial(s.z), e * BigRational::from_integer(BigInt::from(c)));
    }
    poly
}

/// `P(z) = E(J_{i_1}(1) ... J_{i_l}(1) | W(1) = z)` for Stratonovich indices.
///
/// Results are cached on the sorted list since the product commutes.
pub fn conditional_product_expectation(list: &[MultiIndex], m: usize) -> Arc<QPoly> {
    static CACHE: Cache<(Vec<MultiIndex>, usize), Arc<QPoly>> = OnceLock::new();
    assert!(!list.is_empty(), "need at least one index");
    let mut key = list.to_vec();
    key.sort();
    cached(&CACHE, (key.clone(), m), || {
        Arc::new(product_expectation(&key, m, Flavor::Stratonovich))
    })
}

/// Same polynomial as [`conditional_product_expectation`], computed by
/// converting to Itô form, multiplying out and conditioning each resulting
/// integral through the bridge substitution. Much slower; kept as an
/// independent reference.
pub fn conditional_product_expectation_via_ito(list: &[MultiIndex], m: usize) -> QPoly {
    assert!(!list.is_empty(), "need at least one index");
    let mut acc = strat_to_ito(&list[0]);
    for i in &list[1..] {
        acc = combination_product(&acc, &strat_to_ito(i));
    }
    let mut poly = QPoly::zero(m);
    for (j, c) in acc.terms() {
        let b = bridge_conditional_expectation(j, m);
        for (mono, v) in b.terms() {
            poly.add_term(mono.clone(), v * c);
        }
    }
    poly
}
