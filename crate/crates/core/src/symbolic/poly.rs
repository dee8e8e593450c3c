//! Sparse multivariate polynomials.
//!
//! [`Poly`] is generic over the coefficient ring so the same code serves the
//! exact layer (`BigRational`) and the numeric layer (`f64`). Terms live in a
//! `BTreeMap` keyed by [`Monomial`], so two polynomials with the same terms
//! compare equal and print identically.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum PolyError {
    #[error("arity mismatch: {left} vs {right} variables")]
    ArityMismatch { left: usize, right: usize },
    #[error("variable index {index} out of range for arity {arity}")]
    VariableOutOfRange { index: usize, arity: usize },
}

/// Exponent vector ordered by total degree first, then lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Monomial(pub Vec<u32>);

impl Monomial {
    pub fn one(arity: usize) -> Self {
        Monomial(vec![0; arity])
    }

    pub fn var(arity: usize, index: usize) -> Self {
        let mut e = vec![0; arity];
        e[index] = 1;
        Monomial(e)
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn arity(&self) -> usize {
        self.0.len()
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        Monomial(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(x)
            .map(|(&e, &v)| v.powi(e as i32))
            .product()
    }
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Coefficient ring requirements.
pub trait Coeff:
    Clone
    + PartialEq
    + Zero
    + One
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + fmt::Debug
{
    fn from_u32(n: u32) -> Self;
}

impl Coeff for BigRational {
    fn from_u32(n: u32) -> Self {
        BigRational::from_integer(BigInt::from(n))
    }
}

impl Coeff for f64 {
    fn from_u32(n: u32) -> Self {
        n as f64
    }
}

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Poly<C> {
    arity: usize,
    terms: BTreeMap<Monomial, C>,
}

/// Exact-rational polynomial.
pub type QPoly = Poly<BigRational>;

impl<C: Coeff> Poly<C> {
    pub fn zero(arity: usize) -> Self {
        Poly {
            arity,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(arity: usize, c: C) -> Self {
        Self::monomial(arity, Monomial::one(arity), c)
    }

    pub fn one(arity: usize) -> Self {
        Self::constant(arity, C::one())
    }

    /// The polynomial `z_{index+1}`.
    pub fn var(arity: usize, index: usize) -> Self {
        Self::monomial(arity, Monomial::var(arity, index), C::one())
    }

    pub fn monomial(arity: usize, m: Monomial, c: C) -> Self {
        assert_eq!(m.arity(), arity, "monomial arity");
        let mut p = Self::zero(arity);
        if !c.is_zero() {
            p.terms.insert(m, c);
        }
        p
    }

    pub fn from_terms(arity: usize, terms: impl IntoIterator<Item = (Monomial, C)>) -> Self {
        let mut p = Self::zero(arity);
        for (m, c) in terms {
            assert_eq!(m.arity(), arity, "monomial arity");
            p.add_term(m, c);
        }
        p
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Terms in ascending graded-lex order.
    pub fn terms(&self) -> impl DoubleEndedIterator<Item = (&Monomial, &C)> {
        self.terms.iter()
    }

    pub fn coefficient(&self, m: &Monomial) -> C {
        self.terms.get(m).cloned().unwrap_or_else(C::zero)
    }

    /// Total degree; `None` for the zero polynomial.
    pub fn degree(&self) -> Option<u32> {
        self.terms.keys().next_back().map(Monomial::degree)
    }

    /// Adds `c * m` in place, dropping the term if it cancels.
    pub fn add_term(&mut self, m: Monomial, c: C) {
        if c.is_zero() {
            return;
        }
        match self.terms.get_mut(&m) {
            Some(slot) => {
                let v = slot.clone() + c;
                if v.is_zero() {
                    self.terms.remove(&m);
                } else {
                    *slot = v;
                }
            }
            None => {
                self.terms.insert(m, c);
            }
        }
    }

    fn check(&self, other: &Self) -> Result<(), PolyError> {
        if self.arity != other.arity {
            return Err(PolyError::ArityMismatch {
                left: self.arity,
                right: other.arity,
            });
        }
        Ok(())
    }

    pub fn checked_add(&self, other: &Self) -> Result<Self, PolyError> {
        self.check(other)?;
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(m.clone(), c.clone());
        }
        Ok(out)
    }

    pub fn checked_sub(&self, other: &Self) -> Result<Self, PolyError> {
        self.check(other)?;
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(m.clone(), -c.clone());
        }
        Ok(out)
    }

    pub fn checked_mul(&self, other: &Self) -> Result<Self, PolyError> {
        self.check(other)?;
        let mut out = Self::zero(self.arity);
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                out.add_term(ma.mul(mb), ca.clone() * cb.clone());
            }
        }
        Ok(out)
    }

    pub fn scale(&self, c: &C) -> Self {
        if c.is_zero() {
            return Self::zero(self.arity);
        }
        let mut out = Self::zero(self.arity);
        for (m, v) in &self.terms {
            out.add_term(m.clone(), v.clone() * c.clone());
        }
        out
    }

    /// Multiplies by the monomial `z_{index+1}`.
    pub fn mul_var(&self, index: usize) -> Self {
        let terms = self.terms.iter().map(|(m, c)| {
            let mut e = m.0.clone();
            e[index] += 1;
            (Monomial(e), c.clone())
        });
        Poly {
            arity: self.arity,
            terms: terms.collect(),
        }
    }

    /// Partial derivative with respect to variable `index` (zero-based).
    pub fn checked_diff(&self, index: usize) -> Result<Self, PolyError> {
        if index >= self.arity {
            return Err(PolyError::VariableOutOfRange {
                index,
                arity: self.arity,
            });
        }
        Ok(self.diff(index))
    }

    pub fn diff(&self, index: usize) -> Self {
        let mut out = Self::zero(self.arity);
        for (m, c) in &self.terms {
            let e = m.0[index];
            if e == 0 {
                continue;
            }
            let mut exps = m.0.clone();
            exps[index] -= 1;
            out.add_term(Monomial(exps), c.clone() * C::from_u32(e));
        }
        out
    }

    pub fn pow(&self, n: u32) -> Self {
        let mut acc = Self::one(self.arity);
        for _ in 0..n {
            acc = &acc * self;
        }
        acc
    }

    /// Composes with the linear map `z_i = Σ_j a[i][j] y_j`.
    pub fn linear_substitute(&self, a: &[Vec<C>]) -> Self {
        let n = self.arity;
        assert_eq!(a.len(), n, "substitution rows");
        let images: Vec<Poly<C>> = a
            .iter()
            .map(|row| {
                assert_eq!(row.len(), n, "substitution columns");
                Poly::from_terms(
                    n,
                    row.iter()
                        .enumerate()
                        .map(|(j, c)| (Monomial::var(n, j), c.clone())),
                )
            })
            .collect();
        let mut powers: Vec<Vec<Poly<C>>> = vec![vec![Poly::one(n)]; n];
        let mut out = Self::zero(n);
        for (m, c) in &self.terms {
            let mut term = Poly::constant(n, c.clone());
            for (i, &e) in m.0.iter().enumerate() {
                while powers[i].len() <= e as usize {
                    let next = powers[i].last().expect("nonempty") * &images[i];
                    powers[i].push(next);
                }
                if e > 0 {
                    term = &term * &powers[i][e as usize];
                }
            }
            for (mm, cc) in term.terms {
                out.add_term(mm, cc);
            }
        }
        out
    }

    pub fn map_coefficients<D: Coeff>(&self, f: impl Fn(&C) -> D) -> Poly<D> {
        Poly::from_terms(self.arity, self.terms.iter().map(|(m, c)| (m.clone(), f(c))))
    }
}

impl QPoly {
    pub fn to_f64(&self) -> Poly<f64> {
        self.map_coefficients(|c| c.to_f64().unwrap_or(f64::NAN))
    }

    /// Expectation under the standard `arity`-variate Gaussian, exactly.
    pub fn gaussian_expectation(&self) -> BigRational {
        let mut acc = BigRational::zero();
        for (m, c) in &self.terms {
            let mut moment = BigInt::one();
            let mut vanishes = false;
            for &e in &m.0 {
                if e % 2 == 1 {
                    vanishes = true;
                    break;
                }
                // (e-1)!!
                let mut k = e as i64 - 1;
                while k > 1 {
                    moment *= k;
                    k -= 2;
                }
            }
            if !vanishes {
                acc += c * BigRational::from_integer(moment);
            }
        }
        acc
    }

    /// Canonical text with variables named `{prefix}1 .. {prefix}m`.
    pub fn to_text(&self, prefix: &str) -> String {
        format_terms(self, prefix, |c| {
            let a = c.abs();
            (c.is_negative(), if a.is_one() { None } else { Some(rational_text(&a)) })
        })
    }
}

impl Poly<f64> {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|(m, c)| c * m.eval(x)).sum()
    }

    pub fn to_text(&self, prefix: &str) -> String {
        format_terms(self, prefix, |c| {
            let a = c.abs();
            (*c < 0.0, if a == 1.0 { None } else { Some(format!("{a:e}")) })
        })
    }
}

impl QPoly {
    pub fn eval_f64(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(m, c)| c.to_f64().unwrap_or(f64::NAN) * m.eval(x))
            .sum()
    }
}

pub fn rational_text(c: &BigRational) -> String {
    if c.is_integer() {
        c.numer().to_string()
    } else {
        format!("{}/{}", c.numer(), c.denom())
    }
}

fn monomial_text(m: &Monomial, prefix: &str) -> Option<String> {
    let parts: Vec<String> = m
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
        None
    } else {
        Some(parts.join("*"))
    }
}

/// Highest graded-lex term first, e.g. `1/2*z1^2 - 1/2`.
fn format_terms<C: Coeff>(
    p: &Poly<C>,
    prefix: &str,
    split: impl Fn(&C) -> (bool, Option<String>),
) -> String {
    if p.is_zero() {
        return "0".to_string();
    }
    let mut s = String::new();
    for (k, (m, c)) in p.terms.iter().rev().enumerate() {
        let (negative, mag) = split(c);
        if k == 0 {
            if negative {
                s.push('-');
            }
        } else {
            s.push_str(if negative { " - " } else { " + " });
        }
        match (mag, monomial_text(m, prefix)) {
            (Some(a), Some(t)) => {
                s.push_str(&a);
                s.push('*');
                s.push_str(&t);
            }
            (Some(a), None) => s.push_str(&a),
            (None, Some(t)) => s.push_str(&t),
            (None, None) => s.push('1'),
        }
    }
    s
}

impl<C: Coeff> fmt::Debug for Poly<C> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_map().entries(self.terms.iter().map(|(m, c)| (&m.0, c))).finish()
    }
}

impl fmt::Display for QPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text("z"))
    }
}

impl<C: Coeff> Add for &Poly<C> {
    type Output = Poly<C>;
    fn add(self, rhs: &Poly<C>) -> Poly<C> {
        self.checked_add(rhs).expect("polynomial arity")
    }
}

impl<C: Coeff> Sub for &Poly<C> {
    type Output = Poly<C>;
    fn sub(self, rhs: &Poly<C>) -> Poly<C> {
        self.checked_sub(rhs).expect("polynomial arity")
    }
}

impl<C: Coeff> Mul for &Poly<C> {
    type Output = Poly<C>;
    fn mul(self, rhs: &Poly<C>) -> Poly<C> {
        self.checked_mul(rhs).expect("polynomial arity")
    }
}

impl<C: Coeff> Neg for &Poly<C> {
    type Output = Poly<C>;
    fn neg(self) -> Poly<C> {
        self.scale(&(-C::one()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    fn z(i: usize) -> QPoly {
        QPoly::var(2, i)
    }

    #[test]
    fn basic_ring_examples() {
        let z1 = QPoly::var(1, 0);
        let sq = &z1 * &z1;
        assert_eq!(sq.to_text("z"), "z1^2");
        let a = &sq - &QPoly::one(1);
        assert_eq!(&a + &QPoly::one(1), sq);
        let p = &(&z(0) * &z(0)) * &z(1);
        assert_eq!(p.diff(0), (&z(0) * &z(1)).scale(&q(2, 1)));
    }

    #[test]
    fn arity_mismatch_is_reported() {
        let a = QPoly::var(1, 0);
        let b = QPoly::var(2, 1);
        assert_eq!(
            a.checked_add(&b),
            Err(PolyError::ArityMismatch { left: 1, right: 2 })
        );
        assert!(a.checked_mul(&b).is_err());
        assert!(a.checked_diff(3).is_err());
    }

    #[test]
    fn cancellation_leaves_no_zero_terms() {
        let a = &z(0) + &z(1);
        let b = &a - &z(1);
        assert_eq!(b.len(), 1);
        assert!((&a - &a).is_zero());
        assert_eq!((&a - &a).to_text("z"), "0");
    }

    #[test]
    fn canonical_text() {
        let p = QPoly::from_terms(
            2,
            [
                (Monomial(vec![0, 0]), q(-1, 2)),
                (Monomial(vec![2, 0]), q(1, 2)),
                (Monomial(vec![1, 1]), q(-3, 1)),
                (Monomial(vec![0, 1]), q(1, 1)),
            ],
        );
        assert_eq!(p.to_text("z"), "1/2*z1^2 - 3*z1*z2 + z2 - 1/2");
        assert_eq!(p.degree(), Some(2));
    }

    #[test]
    fn linear_substitution() {
        // (z1 + z2)^2 with z1 = 2 y1, z2 = y1 - y2
        let p = (&z(0) + &z(1)).pow(2);
        let a = vec![vec![q(2, 1), q(0, 1)], vec![q(1, 1), q(-1, 1)]];
        let s = p.linear_substitute(&a);
        let expected = QPoly::from_terms(
            2,
            [
                (Monomial(vec![2, 0]), q(9, 1)),
                (Monomial(vec![1, 1]), q(-6, 1)),
                (Monomial(vec![0, 2]), q(1, 1)),
            ],
        );
        assert_eq!(s, expected);
    }

    #[test]
    fn gaussian_moments() {
        let z1 = QPoly::var(1, 0);
        assert_eq!(z1.pow(4).gaussian_expectation(), q(3, 1));
        assert_eq!(z1.pow(3).gaussian_expectation(), q(0, 1));
        let p = &(&z(0) * &z(0)) * &(&z(1) * &z(1));
        assert_eq!(p.gaussian_expectation(), q(1, 1));
    }

    #[test]
    fn float_evaluation() {
        let p = (&z(0) - &z(1)).pow(2).to_f64();
        assert_eq!(p.eval(&[3.0, 1.0]), 4.0);
    }
}
