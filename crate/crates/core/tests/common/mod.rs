//! Strategies and checks shared by the property suite and the acceptance
//! runner.
#![allow(dead_code)]

use std::collections::HashMap;

use difflik::ito::{combination_product, ito_product, strat_to_ito, unconditional_expectation, MultiIndex};
use difflik::ito::conditional_product_expectation;
use difflik::symbolic::{Expr, Monomial, QPoly};
use num_bigint::BigInt;
use num_rational::BigRational;
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

/// Smooth expressions in `x1, x2` that stay finite on `[0.5, 1.5]^2`.
pub fn smooth_expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        Just(Expr::var(0)),
        Just(Expr::var(1)),
        (-3i64..=3).prop_map(Expr::int),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::add([a, b])),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::mul([a, b])),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::sub(a, b)),
            inner.clone().prop_map(|a| Expr::exp(Expr::mul([Expr::float(0.1), a]))),
            inner.clone().prop_map(|a| Expr::log(Expr::add([Expr::one(), Expr::powi(a, 2)]))),
            inner.clone().prop_map(|a| Expr::sqrt(Expr::add([Expr::one(), Expr::powi(a, 2)]))),
            inner.prop_map(|a| Expr::powi(a, 3)),
        ]
    })
}

pub fn point() -> impl Strategy<Value = [f64; 2]> {
    (0.5f64..1.5, 0.5f64..1.5).prop_map(|(a, b)| [a, b])
}

/// Symbolic derivative against a central difference.
pub fn check_derivative(e: &Expr, x: [f64; 2], var: usize) -> Result<(), TestCaseError> {
    let params = HashMap::new();
    let d = e.differentiate(var).eval(&x, &params).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let f = |t: f64| {
        let mut y = x;
        y[var] = t;
        e.eval(&y, &params).unwrap_or(f64::NAN)
    };
    let f0 = f(x[var]);
    if !f0.is_finite() || f0.abs() > 1e6 || !d.is_finite() || d.abs() > 1e6 {
        return Ok(());
    }
    let h = 1e-5;
    let fd = (f(x[var] + h) - f(x[var] - h)) / (2.0 * h);
    prop_assert!(
        (fd - d).abs() <= 1e-5 * (1.0 + d.abs().max(f0.abs())),
        "d/dx{} of {e}: symbolic {d}, finite difference {fd}",
        var + 1
    );
    Ok(())
}

/// Rational polynomials in two variables with small coefficients.
pub fn qpoly() -> impl Strategy<Value = QPoly> {
    prop::collection::vec(((0u32..=3, 0u32..=3), -4i64..=4, 1i64..=3), 0..6).prop_map(|terms| {
        let mut p = QPoly::zero(2);
        for ((a, b), n, d) in terms {
            p.add_term(
                Monomial(vec![a, b]),
                BigRational::new(BigInt::from(n), BigInt::from(d)),
            );
        }
        p
    })
}

#[allow(clippy::eq_op)]
pub fn check_ring_axioms(a: &QPoly, b: &QPoly, c: &QPoly) -> Result<(), TestCaseError> {
    let zero = QPoly::zero(2);
    let one = QPoly::one(2);
    prop_assert_eq!(a + b, b + a);
    prop_assert_eq!(a * b, b * a);
    prop_assert_eq!(&(a + b) + c, a + &(b + c));
    prop_assert_eq!(&(a * b) * c, a * &(b * c));
    prop_assert_eq!(a * &(b + c), &(a * b) + &(a * c));
    prop_assert_eq!(a + &zero, a.clone());
    prop_assert_eq!(a * &one, a.clone());
    prop_assert_eq!(a - a, zero.clone());
    prop_assert_eq!(&(-a) + a, zero);
    Ok(())
}

/// Multi-indices over `{0, .., m}` with `‖i‖ <= max_norm`.
pub fn multi_index(m: u8, max_norm: usize) -> impl Strategy<Value = MultiIndex> {
    prop::collection::vec(0..=m, 1..=max_norm)
        .prop_map(MultiIndex::new)
        .prop_filter("norm bound", move |i| i.norm() <= max_norm)
}

pub fn check_product_symmetry(a: &MultiIndex, b: &MultiIndex) -> Result<(), TestCaseError> {
    prop_assert_eq!(ito_product(a, b), ito_product(b, a));
    Ok(())
}

/// `E[E(∏J | W(1))] = E[∏J]`: the Gaussian average of the conditional
/// polynomial equals the unconditional expectation from the Itô algebra.
pub fn check_tower(list: &[MultiIndex], m: usize) -> Result<(), TestCaseError> {
    let p = conditional_product_expectation(list, m);
    let mut c = strat_to_ito(&list[0]);
    for i in &list[1..] {
        c = combination_product(&c, &strat_to_ito(i));
    }
    prop_assert_eq!(p.gaussian_expectation(), unconditional_expectation(&c));
    Ok(())
}
