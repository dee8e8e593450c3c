//! Recursive-descent parser for infix model expressions.
//!
//! Grammar:
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := ('-' | '+') unary | power
//! power   := primary ('^' unary)?
//! primary := number | ident | func '(' expr ')' | '(' expr ')'
//! func    := 'exp' | 'log' | 'ln' | 'sqrt'
//! ```
//!
//! `x1 .. x<m>` name state variables; every other identifier is a parameter.
//! Exponents must fold to a rational constant. Decimal literals are kept
//! exact (`0.15` is `3/20`).

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::pow::Pow;
use thiserror::Error;

use super::expr::Expr;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("column {column}: {message}")]
pub struct ParseError {
    /// One-based character column of the offending token.
    pub column: usize,
    pub message: String,
}

/// Parses `input` for a model of state dimension `dim`.
pub fn parse_expr(input: &str, dim: usize) -> Result<Expr, ParseError> {
    let mut p = Parser {
        chars: input.chars().collect(),
        pos: 0,
        dim,
    };
    let e = p.expr()?;
    p.skip_ws();
    if p.pos < p.chars.len() {
        return Err(p.error(format!("unexpected `{}`", p.chars[p.pos])));
    }
    Ok(e)
}

struct Parser {
    chars: Vec<char>,
    pos: usize,
    dim: usize,
}

impl Parser {
    fn error(&self, message: impl Into<String>) -> ParseError {
        ParseError {
            column: self.pos + 1,
            message: message.into(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.chars.len() && self.chars[self.pos].is_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.chars.get(self.pos).copied()
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut terms = vec![self.term()?];
        loop {
            if self.eat('+') {
                terms.push(self.term()?);
            } else if self.eat('-') {
                terms.push(Expr::neg(self.term()?));
            } else {
                break;
            }
        }
        Ok(Expr::add(terms))
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut factors = vec![self.unary()?];
        loop {
            if self.eat('*') {
                factors.push(self.unary()?);
            } else if self.eat('/') {
                let start = self.pos;
                let d = self.unary()?;
                if d.is_zero() {
                    return Err(ParseError {
                        column: start + 1,
                        message: "division by literal zero".into(),
                    });
                }
                factors.push(Expr::powi(d, -1));
            } else {
                break;
            }
        }
        Ok(Expr::mul(factors))
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat('-') {
            return Ok(Expr::neg(self.unary()?));
        }
        if self.eat('+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if self.eat('^') {
            let start = self.pos;
            let exponent = self.unary()?;
            let e = exponent.as_const().cloned().ok_or(ParseError {
                column: start + 1,
                message: "exponent must be a rational constant".into(),
            })?;
            return Ok(Expr::pow(base, e));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            None => Err(self.error("unexpected end of expression")),
            Some('(') => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(')') {
                    return Err(self.error("expected `)`"));
                }
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == '.' => self.number(),
            Some(c) if c.is_alphabetic() || c == '_' => self.identifier(),
            Some(c) => Err(self.error(format!("unexpected `{c}`"))),
        }
    }

    fn number(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        let mut digits = String::new();
        let mut frac_digits: i64 = 0;
        let mut seen_dot = false;
        while let Some(&c) = self.chars.get(self.pos) {
            if c.is_ascii_digit() {
                digits.push(c);
                if seen_dot {
                    frac_digits += 1;
                }
            } else if c == '.' && !seen_dot {
                seen_dot = true;
            } else {
                break;
            }
            self.pos += 1;
        }
        if digits.is_empty() {
            return Err(ParseError {
                column: start + 1,
                message: "malformed number".into(),
            });
        }
        let mut exp10: i64 = 0;
        if matches!(self.chars.get(self.pos), Some('e') | Some('E')) {
            let save = self.pos;
            self.pos += 1;
            let mut sign = 1;
            if let Some(&c) = self.chars.get(self.pos) {
                if c == '+' || c == '-' {
                    sign = if c == '-' { -1 } else { 1 };
                    self.pos += 1;
                }
            }
            let mut ed = String::new();
            while let Some(&c) = self.chars.get(self.pos) {
                if c.is_ascii_digit() {
                    ed.push(c);
                    self.pos += 1;
                } else {
                    break;
                }
            }
            if ed.is_empty() {
                self.pos = save;
            } else {
                exp10 = sign * ed.parse::<i64>().map_err(|_| ParseError {
                    column: save + 1,
                    message: "exponent out of range".into(),
                })?;
            }
        }
        let mantissa: BigInt = digits.parse().expect("digit string");
        let shift = exp10 - frac_digits;
        let ten = BigInt::from(10);
        let value = if shift >= 0 {
            BigRational::from_integer(mantissa * Pow::pow(&ten, shift as u32))
        } else {
            BigRational::new(mantissa, Pow::pow(&ten, (-shift) as u32))
        };
        Ok(Expr::constant(value))
    }

    fn identifier(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        let mut name = String::new();
        while let Some(&c) = self.chars.get(self.pos) {
            if c.is_alphanumeric() || c == '_' {
                name.push(c);
                self.pos += 1;
            } else {
                break;
            }
        }
        if matches!(name.as_str(), "exp" | "log" | "ln" | "sqrt") && self.peek() == Some('(') {
            self.pos += 1;
            let arg = self.expr()?;
            if !self.eat(')') {
                return Err(self.error("expected `)`"));
            }
            return Ok(match name.as_str() {
                "exp" => Expr::exp(arg),
                "sqrt" => Expr::sqrt(arg),
                _ => Expr::log(arg),
            });
        }
        if let Some(k) = state_index(&name) {
            if k >= 1 && k <= self.dim {
                return Ok(Expr::var(k - 1));
            }
            return Err(ParseError {
                column: start + 1,
                message: format!("state variable `{name}` out of range for dimension {}", self.dim),
            });
        }
        Ok(Expr::param(&name))
    }
}

fn state_index(name: &str) -> Option<usize> {
    let rest = name.strip_prefix('x')?;
    if rest.is_empty() || !rest.chars().all(|c| c.is_ascii_digit()) || rest.starts_with('0') {
        return None;
    }
    rest.parse().ok()
}

/// Parses a plain rational literal such as `3`, `-1/2` or `0.125`.
pub fn parse_rational(input: &str) -> Result<BigRational, ParseError> {
    let e = parse_expr(input, 0)?;
    e.as_const().cloned().ok_or(ParseError {
        column: 1,
        message: format!("`{input}` is not a rational constant"),
    })
}
