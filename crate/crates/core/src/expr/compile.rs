//! Flattening of expression DAGs into straight-line programs.
//!
//! Quadrature evaluates the same integrand at tens of thousands of nodes; walking
//! the Arc tree each time (and re-walking shared subtrees) is wasteful. A
//! `Program` numbers every distinct node once and evaluates in a single pass.

use super::{apply_func, check, rational_to_f64, DomainKind, EvalError, Expr, Func, Node, Scalar};
use std::collections::HashMap;

#[derive(Clone, Debug)]
enum Op {
    Input(usize),
    Const(f64),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Pow(usize, i32),
    Func(Func, usize),
}

/// Straight-line program computing one or more expressions from a fixed input order.
#[derive(Clone, Debug)]
pub struct Program {
    ops: Vec<Op>,
    // source subtree of each op, kept for error messages
    source: Vec<Expr>,
    outputs: Vec<usize>,
    inputs: Vec<String>,
}

impl Program {
    /// Compile `exprs` against the variable order `inputs`; any other free
    /// variable is reported as unbound.
    pub fn compile(exprs: &[Expr], inputs: &[&str]) -> Result<Program, EvalError> {
        let mut p = Program {
            ops: Vec::new(),
            source: Vec::new(),
            outputs: Vec::new(),
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
        };
        let mut seen = HashMap::new();
        for e in exprs {
            let r = p.emit(e, &mut seen)?;
            p.outputs.push(r);
        }
        Ok(p)
    }

    pub fn single(e: &Expr, inputs: &[&str]) -> Result<Program, EvalError> {
        Program::compile(std::slice::from_ref(e), inputs)
    }

    pub fn inputs(&self) -> &[String] {
        &self.inputs
    }

    pub fn n_outputs(&self) -> usize {
        self.outputs.len()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    fn emit(&mut self, e: &Expr, seen: &mut HashMap<*const Node, usize>) -> Result<usize, EvalError> {
        if let Some(&i) = seen.get(&e.ptr()) {
            return Ok(i);
        }
        let op = match e.node() {
            Node::Var(v) => {
                let k = self.inputs.iter().position(|n| n == v).ok_or_else(|| EvalError::Unbound(v.clone()))?;
                Op::Input(k)
            }
            Node::Const(c) => Op::Const(rational_to_f64(c)),
            Node::Pi => Op::Const(std::f64::consts::PI),
            Node::Add(a, b) => Op::Add(self.emit(a, seen)?, self.emit(b, seen)?),
            Node::Sub(a, b) => Op::Sub(self.emit(a, seen)?, self.emit(b, seen)?),
            Node::Mul(a, b) => Op::Mul(self.emit(a, seen)?, self.emit(b, seen)?),
            Node::Div(a, b) => Op::Div(self.emit(a, seen)?, self.emit(b, seen)?),
            Node::Neg(a) => Op::Neg(self.emit(a, seen)?),
            Node::Pow(a, n) => Op::Pow(self.emit(a, seen)?, *n),
            Node::Func(f, a) => Op::Func(*f, self.emit(a, seen)?),
        };
        self.ops.push(op);
        self.source.push(e.clone());
        let i = self.ops.len() - 1;
        seen.insert(e.ptr(), i);
        Ok(i)
    }

    /// Evaluate all outputs into `out`; `scratch` is reused between calls.
    pub fn eval_into<S: Scalar>(&self, inputs: &[S], scratch: &mut Vec<S>, out: &mut [S]) -> Result<(), EvalError> {
        debug_assert_eq!(inputs.len(), self.inputs.len());
        scratch.clear();
        scratch.reserve(self.ops.len());
        for (i, op) in self.ops.iter().enumerate() {
            let r = &*scratch;
            let v = match *op {
                Op::Input(k) => inputs[k],
                Op::Const(c) => S::from_f64(c),
                Op::Add(a, b) => r[a] + r[b],
                Op::Sub(a, b) => r[a] - r[b],
                Op::Mul(a, b) => r[a] * r[b],
                Op::Div(a, b) => {
                    check(&self.source[i], DomainKind::DivisionByZero, r[b].value() != 0.0)?;
                    r[a] / r[b]
                }
                Op::Neg(a) => -r[a],
                Op::Pow(a, n) => {
                    check(&self.source[i], DomainKind::DivisionByZero, n >= 0 || r[a].value() != 0.0)?;
                    r[a].powi(n)
                }
                Op::Func(f, a) => apply_func(&self.source[i], f, r[a])?,
            };
            scratch.push(v);
        }
        for (o, &k) in out.iter_mut().zip(&self.outputs) {
            *o = scratch[k];
        }
        Ok(())
    }

    /// Evaluate the first output.
    pub fn eval<S: Scalar>(&self, inputs: &[S]) -> Result<S, EvalError> {
        let mut scratch = Vec::new();
        let mut out = [S::from_f64(0.0)];
        self.eval_into(inputs, &mut scratch, &mut out)?;
        Ok(out[0])
    }

    /// Evaluate every output.
    pub fn eval_all<S: Scalar>(&self, inputs: &[S]) -> Result<Vec<S>, EvalError> {
        let mut scratch = Vec::new();
        let mut out = vec![S::from_f64(0.0); self.outputs.len()];
        self.eval_into(inputs, &mut scratch, &mut out)?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse, Jet2};

    #[test]
    fn compiled_matches_tree() {
        let e = parse("sqrt(1 + x^2)*ln(2 + y) - x/(3 + y)").unwrap();
        let p = Program::single(&e, &["x", "y"]).unwrap();
        let a = p.eval(&[0.3, 0.7]).unwrap();
        let b = e.eval_at(&[("x", 0.3), ("y", 0.7)]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shared_subtrees_emitted_once() {
        let x = Expr::var("x");
        let s = (&x + Expr::one()).sin();
        let e = &s * &s + &s;
        let p = Program::single(&e, &["x"]).unwrap();
        // x, 1, x+1, sin, mul, add
        assert_eq!(p.len(), 6);
    }

    #[test]
    fn unbound_and_domain() {
        let e = parse("ln(x) + y").unwrap();
        assert!(matches!(Program::single(&e, &["x"]), Err(EvalError::Unbound(v)) if v == "y"));
        let p = Program::single(&e, &["x", "y"]).unwrap();
        assert!(matches!(p.eval(&[-1.0, 0.0]), Err(EvalError::Domain { .. })));
    }

    #[test]
    fn jet_through_program() {
        let e = parse("x^2").unwrap();
        let p = Program::single(&e, &["x"]).unwrap();
        assert_eq!(p.eval(&[Jet2::new(1.0, 1.0, 0.0)]).unwrap(), Jet2::new(1.0, 2.0, 2.0));
    }
}
