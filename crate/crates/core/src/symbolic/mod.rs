//! Symbolic expressions and exact polynomial arithmetic.

mod compile;
mod expr;
mod parse;
mod poly;

pub use compile::Program;
pub use expr::{EvalError, Expr, Node};
pub use parse::{parse_expr, parse_rational, ParseError};
pub use poly::{rational_text, Coeff, Monomial, Poly, PolyError, QPoly};
