//! Straight-line compilation of expression DAGs for fast repeated evaluation.
//!
//! A [`Program`] evaluates many expressions at once, sharing common
//! subexpressions. Parameters are bound by position instead of by name.

use std::collections::HashMap;

use num_traits::ToPrimitive;

use super::expr::{EvalError, Expr, Node, PowRule};

#[derive(Debug, Clone)]
enum Op {
    Const(f64),
    Var(usize),
    Param(usize),
    Sum(Vec<usize>),
    Product(Vec<usize>),
    Pow(usize, PowRule),
    Exp(usize),
    Log(usize),
}

#[derive(Debug, Clone)]
pub struct Program {
    ops: Vec<Op>,
    /// Source node for each slot, kept for error messages.
    sources: Vec<Expr>,
    outputs: Vec<usize>,
    params: Vec<String>,
}

impl Program {
    /// Compiles `exprs` with parameters bound in the order of `params`.
    pub fn compile(exprs: &[Expr], params: &[String]) -> Result<Program, EvalError> {
        let index: HashMap<&str, usize> = params
            .iter()
            .enumerate()
            .map(|(i, p)| (p.as_str(), i))
            .collect();
        let mut b = Builder {
            ops: Vec::new(),
            sources: Vec::new(),
            slots: HashMap::new(),
            index,
        };
        let outputs = exprs
            .iter()
            .map(|e| b.slot(e))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Program {
            ops: b.ops,
            sources: b.sources,
            outputs,
            params: params.to_vec(),
        })
    }

    pub fn params(&self) -> &[String] {
        &self.params
    }

    pub fn num_outputs(&self) -> usize {
        self.outputs.len()
    }

    pub fn num_slots(&self) -> usize {
        self.ops.len()
    }

    /// Evaluates every output, writing into `out`.
    pub fn eval_into(&self, x: &[f64], theta: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        let mut regs = vec![0.0; self.ops.len()];
        self.eval_with(x, theta, &mut regs)?;
        for (o, &s) in out.iter_mut().zip(&self.outputs) {
            *o = regs[s];
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64], theta: &[f64]) -> Result<Vec<f64>, EvalError> {
        let mut out = vec![0.0; self.outputs.len()];
        self.eval_into(x, theta, &mut out)?;
        Ok(out)
    }

    fn eval_with(&self, x: &[f64], theta: &[f64], regs: &mut [f64]) -> Result<(), EvalError> {
        for (k, op) in self.ops.iter().enumerate() {
            let v = match op {
                Op::Const(c) => *c,
                Op::Var(j) => *x.get(*j).ok_or(EvalError::MissingState {
                    index: j + 1,
                    available: x.len(),
                })?,
                Op::Param(j) => *theta
                    .get(*j)
                    .ok_or_else(|| EvalError::UnboundParameter(self.params[*j].clone()))?,
                Op::Sum(xs) => xs.iter().map(|&s| regs[s]).sum(),
                Op::Product(xs) => xs.iter().map(|&s| regs[s]).product(),
                Op::Pow(s, rule) => rule.apply(regs[*s]).map_err(|reason| self.domain(k, reason))?,
                Op::Exp(s) => regs[*s].exp(),
                Op::Log(s) => {
                    let a = regs[*s];
                    if a <= 0.0 {
                        return Err(self.domain(k, "log of non-positive value"));
                    }
                    a.ln()
                }
            };
            regs[k] = v;
        }
        Ok(())
    }

    fn domain(&self, slot: usize, reason: &str) -> EvalError {
        EvalError::DomainError {
            expr: self.sources[slot].to_string(),
            reason: reason.to_string(),
        }
    }
}

struct Builder<'a> {
    ops: Vec<Op>,
    sources: Vec<Expr>,
    slots: HashMap<Expr, usize>,
    index: HashMap<&'a str, usize>,
}

impl Builder<'_> {
    fn slot(&mut self, e: &Expr) -> Result<usize, EvalError> {
        if let Some(&s) = self.slots.get(e) {
            return Ok(s);
        }
        let op = match e.node() {
            Node::Const(c) => Op::Const(c.to_f64().unwrap_or(f64::NAN)),
            Node::Var(j) => Op::Var(*j),
            Node::Param(p) => Op::Param(
                *self
                    .index
                    .get(&**p)
                    .ok_or_else(|| EvalError::UnboundParameter(p.to_string()))?,
            ),
            Node::Sum(xs) => Op::Sum(xs.iter().map(|x| self.slot(x)).collect::<Result<_, _>>()?),
            Node::Product(xs) => {
                Op::Product(xs.iter().map(|x| self.slot(x)).collect::<Result<_, _>>()?)
            }
            Node::Pow(b, ex) => Op::Pow(self.slot(b)?, PowRule::new(ex)),
            Node::Exp(u) => Op::Exp(self.slot(u)?),
            Node::Log(u) => Op::Log(self.slot(u)?),
        };
        let s = self.ops.len();
        self.ops.push(op);
        self.sources.push(e.clone());
        self.slots.insert(e.clone(), s);
        Ok(s)
    }
}
