//! Expression trees over state variables and named parameters.
//!
//! Every constructor returns a canonical form: sums and products are
//! flattened and sorted, numeric constants are folded, like terms are
//! collected and repeated bases in a product are merged into a single power.
//! No rewriting beyond that is attempted.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

/// Errors raised while evaluating an expression numerically.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum EvalError {
    #[error("unbound parameter `{0}`")]
    UnboundParameter(String),
    #[error("state variable x{index} requested but only {available} values supplied")]
    MissingState { index: usize, available: usize },
    #[error("domain error in `{expr}`: {reason}")]
    DomainError { expr: String, reason: String },
}

/// A node of the expression tree. Use the constructors on [`Expr`] rather
/// than building nodes directly, otherwise the canonical-form invariants do
/// not hold.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Node {
    Const(BigRational),
    /// Zero-based state variable index (`x1` is `Var(0)`).
    Var(usize),
    Param(Arc<str>),
    Sum(Vec<Expr>),
    Product(Vec<Expr>),
    Pow(Expr, BigRational),
    Exp(Expr),
    Log(Expr),
}

/// Immutable, cheaply clonable symbolic scalar expression.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Expr(Arc<Node>);

fn rat(n: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(n))
}

impl Expr {
    fn from_node(node: Node) -> Self {
        Expr(Arc::new(node))
    }

    pub fn node(&self) -> &Node {
        &self.0
    }

    pub fn constant(value: BigRational) -> Self {
        Self::from_node(Node::Const(value))
    }

    pub fn int(value: i64) -> Self {
        Self::constant(rat(value))
    }

    pub fn zero() -> Self {
        Self::int(0)
    }

    pub fn one() -> Self {
        Self::int(1)
    }

    /// Exact rational image of an IEEE double.
    ///
    /// Panics on NaN or infinities.
    pub fn float(value: f64) -> Self {
        Self::constant(BigRational::from_float(value).expect("finite float constant"))
    }

    /// State variable `x{index+1}`.
    pub fn var(index: usize) -> Self {
        Self::from_node(Node::Var(index))
    }

    pub fn param(name: &str) -> Self {
        Self::from_node(Node::Param(Arc::from(name)))
    }

    pub fn as_const(&self) -> Option<&BigRational> {
        match self.node() {
            Node::Const(c) => Some(c),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_const().is_some_and(Zero::is_zero)
    }

    pub fn is_one(&self) -> bool {
        self.as_const().is_some_and(One::is_one)
    }

    pub fn add(terms: impl IntoIterator<Item = Expr>) -> Expr {
        let mut constant = BigRational::zero();
        let mut collected: BTreeMap<Expr, BigRational> = BTreeMap::new();
        let mut push = |term: Expr, constant: &mut BigRational| {
            let (coef, rest) = term.split_coefficient();
            match rest {
                None => *constant += coef,
                Some(rest) => {
                    let slot = collected.entry(rest).or_insert_with(BigRational::zero);
                    *slot += coef;
                }
            }
        };
        for term in terms {
            match term.node() {
                Node::Sum(inner) => {
                    for t in inner {
                        push(t.clone(), &mut constant);
                    }
                }
                _ => push(term, &mut constant),
            }
        }
        let mut out = Vec::with_capacity(collected.len() + 1);
        if !constant.is_zero() {
            out.push(Expr::constant(constant));
        }
        for (rest, coef) in collected {
            if coef.is_zero() {
                continue;
            }
            out.push(Expr::scaled(coef, rest));
        }
        match out.len() {
            0 => Expr::zero(),
            1 => out.pop().unwrap(),
            _ => Expr::from_node(Node::Sum(out)),
        }
    }

    /// `coef * rest` where `rest` carries no numeric coefficient.
    fn scaled(coef: BigRational, rest: Expr) -> Expr {
        if coef.is_one() {
            return rest;
        }
        let mut factors = vec![Expr::constant(coef)];
        match rest.node() {
            Node::Product(fs) => factors.extend(fs.iter().cloned()),
            _ => factors.push(rest),
        }
        Expr::from_node(Node::Product(factors))
    }

    /// Splits `c * rest`; `rest` is `None` for a pure constant.
    fn split_coefficient(&self) -> (BigRational, Option<Expr>) {
        match self.node() {
            Node::Const(c) => (c.clone(), None),
            Node::Product(fs) => match fs[0].node() {
                Node::Const(c) => {
                    let rest = if fs.len() == 2 {
                        fs[1].clone()
                    } else {
                        Expr::from_node(Node::Product(fs[1..].to_vec()))
                    };
                    (c.clone(), Some(rest))
                }
                _ => (BigRational::one(), Some(self.clone())),
            },
            _ => (BigRational::one(), Some(self.clone())),
        }
    }

    pub fn mul(factors: impl IntoIterator<Item = Expr>) -> Expr {
        let mut coef = BigRational::one();
        let mut powers: BTreeMap<Expr, BigRational> = BTreeMap::new();
        let mut push = |f: &Expr, coef: &mut BigRational| match f.node() {
            Node::Const(c) => *coef *= c,
            Node::Pow(base, e) => {
                *powers.entry(base.clone()).or_insert_with(BigRational::zero) += e;
            }
            _ => {
                *powers.entry(f.clone()).or_insert_with(BigRational::zero) += BigRational::one();
            }
        };
        for f in factors {
            match f.node() {
                Node::Product(inner) => {
                    for g in inner {
                        push(g, &mut coef);
                    }
                }
                _ => push(&f, &mut coef),
            }
            if coef.is_zero() {
                return Expr::zero();
            }
        }
        let mut out: Vec<Expr> = Vec::with_capacity(powers.len() + 1);
        let mut reopened = false;
        for (base, e) in powers {
            if e.is_zero() {
                continue;
            }
            let p = Expr::pow(base, e);
            match p.node() {
                Node::Const(c) => coef *= c,
                Node::Product(inner) => {
                    // a product base came back to an integer power; merge its factors again
                    reopened = true;
                    out.extend(inner.iter().cloned());
                }
                _ => out.push(p),
            }
        }
        if reopened {
            out.push(Expr::constant(coef));
            return Expr::mul(out);
        }
        if coef.is_zero() {
            return Expr::zero();
        }
        if out.is_empty() {
            return Expr::constant(coef);
        }
        out.sort();
        if coef.is_one() && out.len() == 1 {
            return out.pop().unwrap();
        }
        if !coef.is_one() {
            out.insert(0, Expr::constant(coef));
        }
        Expr::from_node(Node::Product(out))
    }

    pub fn pow(base: Expr, exponent: BigRational) -> Expr {
        if exponent.is_zero() {
            return Expr::one();
        }
        if exponent.is_one() {
            return base;
        }
        let integral = exponent.is_integer();
        match base.node() {
            Node::Const(c) => {
                if integral {
                    if c.is_zero() && exponent.is_negative() {
                        return Expr::from_node(Node::Pow(base.clone(), exponent));
                    }
                    let n = exponent.to_integer().to_i32().expect("exponent fits in i32");
                    return Expr::constant(num_traits::pow::Pow::pow(c, n));
                }
                if let Some(root) = exact_rational_power(c, &exponent) {
                    return Expr::constant(root);
                }
                Expr::from_node(Node::Pow(base.clone(), exponent))
            }
            Node::Pow(inner, e2) if integral => Expr::pow(inner.clone(), e2 * &exponent),
            Node::Product(fs) if integral => {
                Expr::mul(fs.iter().map(|f| Expr::pow(f.clone(), exponent.clone())))
            }
            Node::Exp(u) => Expr::exp(Expr::mul([Expr::constant(exponent), u.clone()])),
            _ => Expr::from_node(Node::Pow(base.clone(), exponent)),
        }
    }

    pub fn powi(base: Expr, n: i64) -> Expr {
        Expr::pow(base, rat(n))
    }

    pub fn exp(arg: Expr) -> Expr {
        if arg.is_zero() {
            return Expr::one();
        }
        if let Node::Log(inner) = arg.node() {
            return inner.clone();
        }
        Expr::from_node(Node::Exp(arg))
    }

    pub fn log(arg: Expr) -> Expr {
        if arg.is_one() {
            return Expr::zero();
        }
        if let Node::Exp(inner) = arg.node() {
            return inner.clone();
        }
        Expr::from_node(Node::Log(arg))
    }

    pub fn sqrt(arg: Expr) -> Expr {
        Expr::pow(arg, BigRational::new(BigInt::from(1), BigInt::from(2)))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn neg(arg: Expr) -> Expr {
        Expr::mul([Expr::int(-1), arg])
    }

    #[allow(clippy::should_implement_trait)]
    pub fn sub(a: Expr, b: Expr) -> Expr {
        Expr::add([a, Expr::neg(b)])
    }

    #[allow(clippy::should_implement_trait)]
    pub fn div(a: Expr, b: Expr) -> Expr {
        Expr::mul([a, Expr::powi(b, -1)])
    }

    /// Partial derivative with respect to the zero-based state variable.
    pub fn differentiate(&self, var: usize) -> Expr {
        if !self.depends_on(var) {
            return Expr::zero();
        }
        match self.node() {
            Node::Const(_) | Node::Param(_) => Expr::zero(),
            Node::Var(j) => {
                if *j == var {
                    Expr::one()
                } else {
                    Expr::zero()
                }
            }
            Node::Sum(terms) => Expr::add(terms.iter().map(|t| t.differentiate(var))),
            Node::Product(fs) => {
                let mut terms = Vec::new();
                for (k, f) in fs.iter().enumerate() {
                    let df = f.differentiate(var);
                    if df.is_zero() {
                        continue;
                    }
                    let mut factors: Vec<Expr> = Vec::with_capacity(fs.len());
                    factors.extend(fs.iter().enumerate().filter(|(j, _)| *j != k).map(|(_, g)| g.clone()));
                    factors.push(df);
                    terms.push(Expr::mul(factors));
                }
                Expr::add(terms)
            }
            Node::Pow(base, e) => {
                let db = base.differentiate(var);
                Expr::mul([
                    Expr::constant(e.clone()),
                    Expr::pow(base.clone(), e - BigRational::one()),
                    db,
                ])
            }
            Node::Exp(u) => Expr::mul([self.clone(), u.differentiate(var)]),
            Node::Log(u) => Expr::mul([u.differentiate(var), Expr::powi(u.clone(), -1)]),
        }
    }

    pub fn depends_on(&self, var: usize) -> bool {
        match self.node() {
            Node::Const(_) | Node::Param(_) => false,
            Node::Var(j) => *j == var,
            Node::Sum(xs) | Node::Product(xs) => xs.iter().any(|x| x.depends_on(var)),
            Node::Pow(b, _) => b.depends_on(var),
            Node::Exp(u) | Node::Log(u) => u.depends_on(var),
        }
    }

    /// True when no state variable occurs in the expression.
    pub fn is_state_free(&self) -> bool {
        let mut vars = Vec::new();
        self.collect_vars(&mut vars);
        vars.is_empty()
    }

    pub fn collect_vars(&self, out: &mut Vec<usize>) {
        match self.node() {
            Node::Var(j) => {
                if !out.contains(j) {
                    out.push(*j);
                }
            }
            Node::Const(_) | Node::Param(_) => {}
            Node::Sum(xs) | Node::Product(xs) => xs.iter().for_each(|x| x.collect_vars(out)),
            Node::Pow(b, _) => b.collect_vars(out),
            Node::Exp(u) | Node::Log(u) => u.collect_vars(out),
        }
    }

    pub fn collect_params(&self, out: &mut Vec<String>) {
        match self.node() {
            Node::Param(p) => {
                if !out.iter().any(|q| q.as_str() == &**p) {
                    out.push(p.to_string());
                }
            }
            Node::Const(_) | Node::Var(_) => {}
            Node::Sum(xs) | Node::Product(xs) => xs.iter().for_each(|x| x.collect_params(out)),
            Node::Pow(b, _) => b.collect_params(out),
            Node::Exp(u) | Node::Log(u) => u.collect_params(out),
        }
    }

    /// Replaces state variable `var` by `with` and re-canonicalizes.
    pub fn substitute(&self, var: usize, with: &Expr) -> Expr {
        if !self.depends_on(var) {
            return self.clone();
        }
        match self.node() {
            Node::Var(j) if *j == var => with.clone(),
            Node::Const(_) | Node::Param(_) | Node::Var(_) => self.clone(),
            Node::Sum(xs) => Expr::add(xs.iter().map(|x| x.substitute(var, with))),
            Node::Product(xs) => Expr::mul(xs.iter().map(|x| x.substitute(var, with))),
            Node::Pow(b, e) => Expr::pow(b.substitute(var, with), e.clone()),
            Node::Exp(u) => Expr::exp(u.substitute(var, with)),
            Node::Log(u) => Expr::log(u.substitute(var, with)),
        }
    }

    /// Numeric evaluation at state `x` with named parameter values.
    pub fn eval(&self, x: &[f64], params: &HashMap<String, f64>) -> Result<f64, EvalError> {
        let v = match self.node() {
            Node::Const(c) => c.to_f64().unwrap_or(f64::NAN),
            Node::Var(j) => *x.get(*j).ok_or(EvalError::MissingState {
                index: j + 1,
                available: x.len(),
            })?,
            Node::Param(p) => *params
                .get(&**p)
                .ok_or_else(|| EvalError::UnboundParameter(p.to_string()))?,
            Node::Sum(xs) => {
                let mut acc = 0.0;
                for t in xs {
                    acc += t.eval(x, params)?;
                }
                acc
            }
            Node::Product(xs) => {
                let mut acc = 1.0;
                for t in xs {
                    acc *= t.eval(x, params)?;
                }
                acc
            }
            Node::Pow(b, e) => {
                let base = b.eval(x, params)?;
                let rule = PowRule::new(e);
                rule.apply(base).map_err(|reason| EvalError::DomainError {
                    expr: self.to_string(),
                    reason: reason.to_string(),
                })?
            }
            Node::Exp(u) => u.eval(x, params)?.exp(),
            Node::Log(u) => {
                let a = u.eval(x, params)?;
                if a <= 0.0 {
                    return Err(EvalError::DomainError {
                        expr: self.to_string(),
                        reason: format!("log of non-positive value {a}"),
                    });
                }
                a.ln()
            }
        };
        Ok(v)
    }

    /// Number of nodes, counting shared subtrees once per occurrence.
    pub fn size(&self) -> usize {
        1 + match self.node() {
            Node::Const(_) | Node::Var(_) | Node::Param(_) => 0,
            Node::Sum(xs) | Node::Product(xs) => xs.iter().map(Expr::size).sum(),
            Node::Pow(b, _) => b.size(),
            Node::Exp(u) | Node::Log(u) => u.size(),
        }
    }
}

/// `c^e` when it is an exact rational (perfect powers only).
fn exact_rational_power(c: &BigRational, e: &BigRational) -> Option<BigRational> {
    if c.is_negative() {
        return None;
    }
    let q = e.denom().to_u32()?;
    let p = e.numer().to_i32()?;
    let num = exact_root(c.numer(), q)?;
    let den = exact_root(c.denom(), q)?;
    let base = BigRational::new(num, den);
    if base.is_zero() && p < 0 {
        return None;
    }
    Some(num_traits::pow::Pow::pow(&base, p))
}

fn exact_root(n: &BigInt, q: u32) -> Option<BigInt> {
    let r = n.nth_root(q);
    if num_traits::pow::Pow::pow(&r, q) == *n {
        Some(r)
    } else {
        None
    }
}

/// Precomputed evaluation rule for `base^e` with rational `e`.
#[derive(Debug, Clone, Copy)]
pub(crate) enum PowRule {
    Int(i32),
    Sqrt,
    InvSqrt,
    /// General rational exponent; `odd_root` when the reduced denominator is odd.
    Real { value: f64, odd_root: bool, odd_numer: bool, negative: bool },
}

impl PowRule {
    pub(crate) fn new(e: &BigRational) -> Self {
        if e.is_integer() {
            return PowRule::Int(e.to_integer().to_i32().expect("exponent fits in i32"));
        }
        let half = BigRational::new(BigInt::from(1), BigInt::from(2));
        if *e == half {
            return PowRule::Sqrt;
        }
        if *e == -half {
            return PowRule::InvSqrt;
        }
        PowRule::Real {
            value: e.to_f64().unwrap_or(f64::NAN),
            odd_root: e.denom().is_odd(),
            odd_numer: e.numer().is_odd(),
            negative: e.is_negative(),
        }
    }

    pub(crate) fn apply(self, base: f64) -> Result<f64, &'static str> {
        match self {
            PowRule::Int(n) => {
                if base == 0.0 && n < 0 {
                    Err("division by zero")
                } else {
                    Ok(base.powi(n))
                }
            }
            PowRule::Sqrt => {
                if base < 0.0 {
                    Err("square root of a negative value")
                } else {
                    Ok(base.sqrt())
                }
            }
            PowRule::InvSqrt => {
                if base <= 0.0 {
                    Err("reciprocal square root of a non-positive value")
                } else {
                    Ok(1.0 / base.sqrt())
                }
            }
            PowRule::Real { value, odd_root, odd_numer, negative } => {
                if base == 0.0 && negative {
                    return Err("division by zero");
                }
                if base < 0.0 {
                    if !odd_root {
                        return Err("even root of a negative value");
                    }
                    // odd roots of negatives are real; the sign follows the numerator parity
                    let mag = (-base).powf(value);
                    return Ok(if odd_numer { -mag } else { mag });
                }
                Ok(base.powf(value))
            }
        }
    }
}

impl From<i64> for Expr {
    fn from(v: i64) -> Self {
        Expr::int(v)
    }
}

impl std::ops::Add for Expr {
    type Output = Expr;
    fn add(self, rhs: Expr) -> Expr {
        Expr::add([self, rhs])
    }
}

impl std::ops::Sub for Expr {
    type Output = Expr;
    fn sub(self, rhs: Expr) -> Expr {
        Expr::sub(self, rhs)
    }
}

impl std::ops::Mul for Expr {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        Expr::mul([self, rhs])
    }
}

impl std::ops::Div for Expr {
    type Output = Expr;
    fn div(self, rhs: Expr) -> Expr {
        Expr::div(self, rhs)
    }
}

impl std::ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::neg(self)
    }
}

fn fmt_rational(c: &BigRational) -> String {
    if c.is_integer() {
        c.numer().to_string()
    } else {
        format!("{}/{}", c.numer(), c.denom())
    }
}

/// Binding strength used to decide where parentheses are needed.
fn precedence(e: &Expr) -> u8 {
    match e.node() {
        Node::Sum(_) => 1,
        Node::Const(c) if c.is_negative() || !c.is_integer() => 2,
        Node::Product(_) => 2,
        Node::Pow(_, exp) if *exp == BigRational::new(BigInt::from(1), BigInt::from(2)) => 4,
        Node::Pow(_, _) => 3,
        _ => 4,
    }
}

fn write_operand(f: &mut fmt::Formatter<'_>, e: &Expr, min_prec: u8) -> fmt::Result {
    if precedence(e) < min_prec {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

fn write_product(f: &mut fmt::Formatter<'_>, coef: &BigRational, factors: &[Expr]) -> fmt::Result {
    let mut numer: Vec<Expr> = Vec::new();
    let mut denom: Vec<Expr> = Vec::new();
    for g in factors {
        match g.node() {
            Node::Pow(b, e) if e.is_negative() => denom.push(Expr::pow(b.clone(), -e.clone())),
            _ => numer.push(g.clone()),
        }
    }
    let mut first = true;
    let c_num = coef.numer().clone();
    let c_den = coef.denom().clone();
    if c_num != BigInt::one() || numer.is_empty() {
        if c_num == BigInt::from(-1) && !numer.is_empty() {
            write!(f, "-")?;
        } else {
            write!(f, "{c_num}")?;
            first = false;
        }
    }
    for g in &numer {
        if !first {
            write!(f, "*")?;
        }
        write_operand(f, g, 3)?;
        first = false;
    }
    if c_den != BigInt::one() {
        write!(f, "/{c_den}")?;
    }
    for g in &denom {
        write!(f, "/")?;
        write_operand(f, g, 4)?;
    }
    Ok(())
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.node() {
            Node::Const(c) => write!(f, "{}", fmt_rational(c)),
            Node::Var(j) => write!(f, "x{}", j + 1),
            Node::Param(p) => write!(f, "{p}"),
            Node::Sum(terms) => {
                // positive terms first so `alpha - x1` reads naturally
                let mut ordered: Vec<&Expr> = terms.iter().collect();
                ordered.sort_by_key(|t| t.split_coefficient().0.is_negative());
                for (k, t) in ordered.into_iter().enumerate() {
                    let (coef, rest) = t.split_coefficient();
                    if k > 0 {
                        if coef.is_negative() {
                            write!(f, " - ")?;
                        } else {
                            write!(f, " + ")?;
                        }
                        let mag = coef.abs();
                        match rest {
                            None => write!(f, "{}", fmt_rational(&mag))?,
                            Some(r) => match r.node() {
                                Node::Product(fs) => write_product(f, &mag, fs)?,
                                _ => write_product(f, &mag, std::slice::from_ref(&r))?,
                            },
                        }
                    } else {
                        write!(f, "{t}")?;
                    }
                }
                Ok(())
            }
            Node::Product(fs) => {
                let (coef, rest) = self.split_coefficient();
                let rest_factors: Vec<Expr> = match rest {
                    Some(r) => match r.node() {
                        Node::Product(xs) => xs.clone(),
                        _ => vec![r],
                    },
                    None => Vec::new(),
                };
                debug_assert!(!fs.is_empty());
                write_product(f, &coef, &rest_factors)
            }
            Node::Pow(b, e) => {
                let half = BigRational::new(BigInt::from(1), BigInt::from(2));
                if *e == half {
                    return write!(f, "sqrt({b})");
                }
                if e.is_negative() {
                    write!(f, "1/")?;
                    return write_operand(f, &Expr::pow(b.clone(), -e.clone()), 4);
                }
                write_operand(f, b, 4)?;
                if e.is_integer() {
                    write!(f, "^{}", e.numer())
                } else {
                    write!(f, "^({})", fmt_rational(e))
                }
            }
            Node::Exp(u) => write!(f, "exp({u})"),
            Node::Log(u) => write!(f, "log({u})"),
        }
    }
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({self})")
    }
}
