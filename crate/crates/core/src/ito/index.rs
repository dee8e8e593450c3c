use std::collections::BTreeMap;
use std::fmt;

use num_rational::BigRational;
use num_traits::{Signed, Zero};

use crate::symbolic::rational_text;

/// Index of an iterated integral over `{0, 1, .., m}`.
///
/// Entry `0` is the time integrator `dt`, entry `j >= 1` is `dW_j`. The
/// first entry is the outermost integral:
/// `I_(i1,..,in)(t) = ∫_0^t I_(i2,..,in)(s) dW_{i1}(s)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct MultiIndex(Vec<u8>);

impl MultiIndex {
    pub fn new(entries: impl Into<Vec<u8>>) -> Self {
        MultiIndex(entries.into())
    }

    pub fn empty() -> Self {
        MultiIndex(Vec::new())
    }

    pub fn entries(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Weight in powers of `sqrt(Δ)`: time entries count twice.
    pub fn norm(&self) -> usize {
        norm(&self.0)
    }

    /// Drops the outermost entry.
    pub fn minus(&self) -> MultiIndex {
        MultiIndex(self.0.get(1..).unwrap_or(&[]).to_vec())
    }

    pub fn prepend(&self, head: u8) -> MultiIndex {
        let mut v = Vec::with_capacity(self.0.len() + 1);
        v.push(head);
        v.extend_from_slice(&self.0);
        MultiIndex(v)
    }

    pub fn is_all_zero(&self) -> bool {
        self.0.iter().all(|&e| e == 0)
    }

    /// Largest Brownian coordinate referenced, 0 if none.
    pub fn max_coordinate(&self) -> u8 {
        self.0.iter().copied().max().unwrap_or(0)
    }

    /// Every index over `{0..m}` with the given norm, in lexicographic order.
    pub fn with_norm(target: usize, m: u8) -> Vec<MultiIndex> {
        let mut out = Vec::new();
        let mut cur = Vec::new();
        fn rec(rem: usize, m: u8, cur: &mut Vec<u8>, out: &mut Vec<MultiIndex>) {
            if rem == 0 {
                out.push(MultiIndex(cur.clone()));
                return;
            }
            for e in 0..=m {
                let w = if e == 0 { 2 } else { 1 };
                if w <= rem {
                    cur.push(e);
                    rec(rem - w, m, cur, out);
                    cur.pop();
                }
            }
        }
        rec(target, m, &mut cur, &mut out);
        out
    }
}

pub(crate) fn norm(entries: &[u8]) -> usize {
    entries.iter().map(|&e| if e == 0 { 2 } else { 1 }).sum()
}

impl From<Vec<u8>> for MultiIndex {
    fn from(v: Vec<u8>) -> Self {
        MultiIndex(v)
    }
}

impl From<&[u8]> for MultiIndex {
    fn from(v: &[u8]) -> Self {
        MultiIndex(v.to_vec())
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (k, e) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{e}")?;
        }
        write!(f, ")")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Flavor {
    Ito,
    Stratonovich,
}

/// Finite linear combination of iterated integrals with exact coefficients.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntegralCombination {
    flavor: Flavor,
    terms: BTreeMap<MultiIndex, BigRational>,
}

impl IntegralCombination {
    pub fn zero(flavor: Flavor) -> Self {
        IntegralCombination {
            flavor,
            terms: BTreeMap::new(),
        }
    }

    pub fn single(flavor: Flavor, index: MultiIndex) -> Self {
        let mut c = Self::zero(flavor);
        c.add_term(index, BigRational::from_integer(1.into()));
        c
    }

    pub fn from_terms(
        flavor: Flavor,
        terms: impl IntoIterator<Item = (MultiIndex, BigRational)>,
    ) -> Self {
        let mut c = Self::zero(flavor);
        for (i, v) in terms {
            c.add_term(i, v);
        }
        c
    }

    pub fn flavor(&self) -> Flavor {
        self.flavor
    }

    pub fn terms(&self) -> impl Iterator<Item = (&MultiIndex, &BigRational)> {
        self.terms.iter()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coefficient(&self, index: &MultiIndex) -> BigRational {
        self.terms.get(index).cloned().unwrap_or_else(BigRational::zero)
    }

    pub fn add_term(&mut self, index: MultiIndex, coef: BigRational) {
        if coef.is_zero() {
            return;
        }
        let slot = self.terms.entry(index.clone()).or_insert_with(BigRational::zero);
        *slot += coef;
        if slot.is_zero() {
            self.terms.remove(&index);
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.flavor, other.flavor, "mixing integral flavors");
        let mut out = self.clone();
        for (i, c) in &other.terms {
            out.add_term(i.clone(), c.clone());
        }
        out
    }

    pub fn scale(&self, c: &BigRational) -> Self {
        Self::from_terms(
            self.flavor,
            self.terms.iter().map(|(i, v)| (i.clone(), v * c)),
        )
    }

    /// Wraps every term in one more outer integral against `dW_head`.
    pub fn prepend(&self, head: u8) -> Self {
        IntegralCombination {
            flavor: self.flavor,
            terms: self
                .terms
                .iter()
                .map(|(i, c)| (i.prepend(head), c.clone()))
                .collect(),
        }
    }
}

impl fmt::Display for IntegralCombination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let sym = match self.flavor {
            Flavor::Ito => "I",
            Flavor::Stratonovich => "J",
        };
        for (k, (i, c)) in self.terms.iter().rev().enumerate() {
            let neg = c.is_negative();
            if k == 0 {
                if neg {
                    write!(f, "-")?;
                }
            } else {
                write!(f, "{}", if neg { " - " } else { " + " })?;
            }
            let a = c.abs();
            if a != BigRational::from_integer(1.into()) {
                write!(f, "{}*", rational_text(&a))?;
            }
            write!(f, "{sym}{i}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn norm_counts_time_twice() {
        assert_eq!(MultiIndex::new(vec![0, 1, 0]).norm(), 5);
        assert_eq!(MultiIndex::empty().norm(), 0);
        assert_eq!(MultiIndex::new(vec![2, 1]).minus(), MultiIndex::new(vec![1]));
    }

    #[test]
    fn enumerate_by_norm() {
        let idx = MultiIndex::with_norm(2, 1);
        assert_eq!(idx, vec![MultiIndex::new(vec![0]), MultiIndex::new(vec![1, 1])]);
        // a_n = 2 a_{n-1} + a_{n-2} with a_0 = 1, a_1 = 2
        assert_eq!(MultiIndex::with_norm(3, 2).len(), 12);
        for i in MultiIndex::with_norm(5, 2) {
            assert_eq!(i.norm(), 5);
        }
    }

    #[test]
    fn combination_text() {
        let c = IntegralCombination::from_terms(
            Flavor::Ito,
            [
                (MultiIndex::new(vec![1, 1]), BigRational::from_integer(1.into())),
                (MultiIndex::new(vec![0]), BigRational::new(1.into(), 2.into())),
            ],
        );
        assert_eq!(c.to_string(), "I(1,1) + 1/2*I(0)");
    }
}
