//! Stratonovich to Itô conversion and products of iterated Itô integrals.
//!
//! Pure products have nonnegative integer coefficients (they count
//! interleavings), so the inner loops work on `u128` counts and only the
//! public surface uses rationals.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock, RwLock};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};

use super::index::{Flavor, IntegralCombination, MultiIndex};

pub(crate) type Counts = HashMap<Vec<u8>, u128>;

/// Itô expansion of the iterated Stratonovich integral `J_i`.
pub fn strat_to_ito(i: &MultiIndex) -> IntegralCombination {
    let e = i.entries();
    if e.len() <= 1 {
        return IntegralCombination::single(Flavor::Ito, i.clone());
    }
    let mut out = strat_to_ito(&i.minus()).prepend(e[0]);
    if e[0] == e[1] && e[0] != 0 {
        let half = BigRational::new(BigInt::from(1), BigInt::from(2));
        let inner = strat_to_ito(&MultiIndex::new(&e[2..])).prepend(0).scale(&half);
        out = out.add(&inner);
    }
    out
}

fn product_cache() -> &'static RwLock<HashMap<(Vec<u8>, Vec<u8>), Arc<Vec<(Vec<u8>, u128)>>>> {
    static CACHE: OnceLock<RwLock<HashMap<(Vec<u8>, Vec<u8>), Arc<Vec<(Vec<u8>, u128)>>>>> =
        OnceLock::new();
    CACHE.get_or_init(Default::default)
}

/// `I_a * I_b` as counts over pure indices, cached globally.
pub(crate) fn pure_product(a: &[u8], b: &[u8]) -> Arc<Vec<(Vec<u8>, u128)>> {
    let key = if a <= b {
        (a.to_vec(), b.to_vec())
    } else {
        (b.to_vec(), a.to_vec())
    };
    if let Some(hit) = product_cache().read().expect("cache lock").get(&key) {
        return hit.clone();
    }
    let mut memo: HashMap<(usize, usize), Arc<Counts>> = HashMap::new();
    let counts = product_rec(&key.0, &key.1, &mut memo);
    let mut v: Vec<(Vec<u8>, u128)> = counts.iter().map(|(k, c)| (k.clone(), *c)).collect();
    v.sort();
    let v = Arc::new(v);
    product_cache()
        .write()
        .expect("cache lock")
        .insert(key, v.clone());
    v
}

fn product_rec(
    a: &[u8],
    b: &[u8],
    memo: &mut HashMap<(usize, usize), Arc<Counts>>,
) -> Arc<Counts> {
    if let Some(hit) = memo.get(&(a.len(), b.len())) {
        return hit.clone();
    }
    let mut out = Counts::new();
    if a.is_empty() || b.is_empty() {
        let only = if a.is_empty() { b } else { a };
        out.insert(only.to_vec(), 1);
    } else {
        let mut push = |head: u8, part: &Counts| {
            for (k, c) in part {
                let mut key = Vec::with_capacity(k.len() + 1);
                key.push(head);
                key.extend_from_slice(k);
                *out.entry(key).or_insert(0) += c;
            }
        };
        push(b[0], &product_rec(a, &b[1..], memo));
        push(a[0], &product_rec(&a[1..], b, memo));
        if a[0] == b[0] && a[0] != 0 {
            push(0, &product_rec(&a[1..], &b[1..], memo));
        }
    }
    let out = Arc::new(out);
    memo.insert((a.len(), b.len()), out.clone());
    out
}

/// Product of two iterated Itô integrals as a linear combination.
pub fn ito_product(a: &MultiIndex, b: &MultiIndex) -> IntegralCombination {
    IntegralCombination::from_terms(
        Flavor::Ito,
        pure_product(a.entries(), b.entries())
            .iter()
            .map(|(k, c)| (MultiIndex::new(k.clone()), BigRational::from_integer((*c).into()))),
    )
}

/// Product of two Itô combinations, extended bilinearly.
pub fn combination_product(a: &IntegralCombination, b: &IntegralCombination) -> IntegralCombination {
    let mut acc: HashMap<Vec<u8>, BigRational> = HashMap::new();
    for (ia, ca) in a.terms() {
        for (ib, cb) in b.terms() {
            let coef = ca * cb;
            for (k, c) in pure_product(ia.entries(), ib.entries()).iter() {
                let slot = acc.entry(k.clone()).or_insert_with(BigRational::zero);
                *slot += &coef * BigRational::from_integer((*c).into());
            }
        }
    }
    IntegralCombination::from_terms(
        Flavor::Ito,
        acc.into_iter().map(|(k, c)| (MultiIndex::new(k), c)),
    )
}

/// Left fold of [`ito_product`] over a nonempty list.
pub fn ito_product_n(list: &[MultiIndex]) -> IntegralCombination {
    assert!(!list.is_empty(), "ito_product_n needs at least one index");
    let mut acc = IntegralCombination::single(Flavor::Ito, list[0].clone());
    for i in &list[1..] {
        acc = combination_product(&acc, &IntegralCombination::single(Flavor::Ito, i.clone()));
    }
    acc
}

pub(crate) fn factorial(n: usize) -> BigInt {
    (1..=n).fold(BigInt::one(), |acc, k| acc * k)
}

/// `E[I_i(1)]` is `1/n!` for the all-time index of length `n`, else zero.
pub fn unconditional_expectation(c: &IntegralCombination) -> BigRational {
    let mut acc = BigRational::zero();
    for (i, coef) in c.terms() {
        if i.is_all_zero() {
            acc += coef / BigRational::from_integer(factorial(i.len()));
        }
    }
    acc
}

/// Multiplies every term of `counts` by the single integral `I_(s)(1)`:
/// `s` is inserted at every position, and each entry equal to `s` may be
/// contracted to `0`.
pub(crate) fn times_single(counts: &Counts, s: u8, keep: impl Fn(&[u8]) -> bool) -> Counts {
    let mut out = Counts::new();
    let mut scratch: Vec<u8> = Vec::new();
    for (k, &c) in counts {
        for pos in 0..=k.len() {
            scratch.clear();
            scratch.extend_from_slice(&k[..pos]);
            scratch.push(s);
            scratch.extend_from_slice(&k[pos..]);
            if keep(&scratch) {
                *out.entry(scratch.clone()).or_insert(0) += c;
            }
        }
        if s != 0 {
            for pos in 0..k.len() {
                if k[pos] == s {
                    scratch.clear();
                    scratch.extend_from_slice(k);
                    scratch[pos] = 0;
                    if keep(&scratch) {
                        *out.entry(scratch.clone()).or_insert(0) += c;
                    }
                }
            }
        }
    }
    out
}
