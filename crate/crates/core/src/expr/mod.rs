//! Symbolic expressions over named real variables with exact rational constants.
//!
//! Expressions are immutable, reference-counted trees. The smart constructors
//! fold constants (and the trivial identities 0+x, 1·x, x^1, ...) but do no
//! other simplification; equality of expressions is meant semantically, by
//! evaluation.

mod compile;
mod parse;
mod scalar;

pub use compile::Program;
pub use parse::{parse, ParseError};
pub use scalar::{Dual, Jet2, Scalar};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::Arc;

/// Exact rational with arbitrary-precision numerator and denominator.
pub type Rational = BigRational;

/// Build `n/d` as a normalized rational.
pub fn rational(n: i64, d: i64) -> Rational {
    Rational::new(BigInt::from(n), BigInt::from(d))
}

pub fn rational_to_f64(r: &Rational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Func {
    Ln,
    Sqrt,
    Sin,
    Cos,
    Artanh,
    Cot,
}

impl Func {
    pub const ALL: [Func; 6] = [Func::Ln, Func::Sqrt, Func::Sin, Func::Cos, Func::Artanh, Func::Cot];

    pub fn name(self) -> &'static str {
        match self {
            Func::Ln => "ln",
            Func::Sqrt => "sqrt",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Artanh => "artanh",
            Func::Cot => "cot",
        }
    }

    pub fn from_name(s: &str) -> Option<Func> {
        Func::ALL.into_iter().find(|f| f.name() == s)
    }
}

#[derive(Debug)]
pub enum Node {
    Var(String),
    Const(Rational),
    Pi,
    Add(Expr, Expr),
    Sub(Expr, Expr),
    Mul(Expr, Expr),
    Div(Expr, Expr),
    Neg(Expr),
    Pow(Expr, i32),
    Func(Func, Expr),
}

#[derive(Clone, Debug)]
pub struct Expr(Arc<Node>);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DomainKind {
    DivisionByZero,
    LogNonPositive,
    SqrtNegative,
    ArtanhOutOfRange,
    CotPole,
}

impl fmt::Display for DomainKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DomainKind::DivisionByZero => "division by zero",
            DomainKind::LogNonPositive => "ln of a non-positive value",
            DomainKind::SqrtNegative => "sqrt of a negative value",
            DomainKind::ArtanhOutOfRange => "artanh outside (-1, 1)",
            DomainKind::CotPole => "cot at a pole",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("unbound variable `{0}`")]
    Unbound(String),
    #[error("{kind} in `{subtree}`")]
    Domain { kind: DomainKind, subtree: String },
}

impl Expr {
    fn new(node: Node) -> Expr {
        Expr(Arc::new(node))
    }

    pub fn node(&self) -> &Node {
        &self.0
    }

    pub(crate) fn ptr(&self) -> *const Node {
        Arc::as_ptr(&self.0)
    }

    pub fn var(name: &str) -> Expr {
        Expr::new(Node::Var(name.to_string()))
    }

    pub fn constant(r: Rational) -> Expr {
        Expr::new(Node::Const(r))
    }

    pub fn int(n: i64) -> Expr {
        Expr::constant(Rational::from_integer(BigInt::from(n)))
    }

    pub fn ratio(n: i64, d: i64) -> Expr {
        Expr::constant(rational(n, d))
    }

    /// Exact rational image of a finite double.
    pub fn from_f64(x: f64) -> Expr {
        Expr::constant(Rational::from_float(x).expect("finite constant"))
    }

    pub fn zero() -> Expr {
        Expr::int(0)
    }

    pub fn one() -> Expr {
        Expr::int(1)
    }

    pub fn pi() -> Expr {
        Expr::new(Node::Pi)
    }

    pub fn as_const(&self) -> Option<&Rational> {
        match self.node() {
            Node::Const(r) => Some(r),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_const().is_some_and(|r| r.is_zero())
    }

    pub fn is_one(&self) -> bool {
        self.as_const().is_some_and(|r| r.is_one())
    }

    pub fn pow(&self, n: i32) -> Expr {
        if n == 0 {
            return Expr::one();
        }
        if n == 1 {
            return self.clone();
        }
        if let Some(c) = self.as_const() {
            if !(c.is_zero() && n < 0) {
                return Expr::constant(num_traits::pow::Pow::pow(c, n));
            }
        }
        Expr::new(Node::Pow(self.clone(), n))
    }

    /// `self^(k/2)`, represented as `sqrt(self^k)`.
    pub fn half_pow(&self, k: i32) -> Expr {
        if k % 2 == 0 {
            self.pow(k / 2)
        } else {
            self.pow(k).sqrt()
        }
    }

    pub fn apply(&self, f: Func) -> Expr {
        if let Some(c) = self.as_const() {
            let folded = match f {
                Func::Ln if c.is_one() => Some(Expr::zero()),
                Func::Sqrt if c.is_zero() || c.is_one() => Some(self.clone()),
                Func::Sin | Func::Artanh if c.is_zero() => Some(Expr::zero()),
                Func::Cos if c.is_zero() => Some(Expr::one()),
                _ => None,
            };
            if let Some(e) = folded {
                return e;
            }
        }
        Expr::new(Node::Func(f, self.clone()))
    }

    pub fn ln(&self) -> Expr {
        self.apply(Func::Ln)
    }
    pub fn sqrt(&self) -> Expr {
        self.apply(Func::Sqrt)
    }
    pub fn sin(&self) -> Expr {
        self.apply(Func::Sin)
    }
    pub fn cos(&self) -> Expr {
        self.apply(Func::Cos)
    }
    pub fn artanh(&self) -> Expr {
        self.apply(Func::Artanh)
    }
    pub fn cot(&self) -> Expr {
        self.apply(Func::Cot)
    }

    /// Free variable names, sorted.
    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.visit_unique(&mut HashSet::new(), &mut |n| {
            if let Node::Var(v) = n {
                out.insert(v.clone());
            }
        });
        out
    }

    /// Visit every distinct node once (derivatives share subtrees heavily).
    fn visit_unique(&self, seen: &mut HashSet<*const Node>, f: &mut impl FnMut(&Node)) {
        if !seen.insert(self.ptr()) {
            return;
        }
        f(self.node());
        match self.node() {
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
                a.visit_unique(seen, f);
                b.visit_unique(seen, f);
            }
            Node::Neg(a) | Node::Pow(a, _) | Node::Func(_, a) => a.visit_unique(seen, f),
            Node::Var(_) | Node::Const(_) | Node::Pi => {}
        }
    }

    /// Number of distinct nodes in the expression DAG.
    pub fn size(&self) -> usize {
        let mut n = 0;
        self.visit_unique(&mut HashSet::new(), &mut |_| n += 1);
        n
    }

    /// Rebuild the tree bottom-up, replacing variables via `f`.
    fn map_vars(&self, f: &impl Fn(&str) -> Option<Expr>, memo: &mut HashMap<*const Node, Expr>) -> Expr {
        if let Some(e) = memo.get(&self.ptr()) {
            return e.clone();
        }
        let out = match self.node() {
            Node::Var(v) => f(v).unwrap_or_else(|| self.clone()),
            Node::Const(_) | Node::Pi => self.clone(),
            Node::Add(a, b) => a.map_vars(f, memo) + b.map_vars(f, memo),
            Node::Sub(a, b) => a.map_vars(f, memo) - b.map_vars(f, memo),
            Node::Mul(a, b) => a.map_vars(f, memo) * b.map_vars(f, memo),
            Node::Div(a, b) => a.map_vars(f, memo) / b.map_vars(f, memo),
            Node::Neg(a) => -a.map_vars(f, memo),
            Node::Pow(a, n) => a.map_vars(f, memo).pow(*n),
            Node::Func(g, a) => a.map_vars(f, memo).apply(*g),
        };
        memo.insert(self.ptr(), out.clone());
        out
    }

    pub fn substitute(&self, name: &str, value: &Expr) -> Expr {
        self.map_vars(&|v| (v == name).then(|| value.clone()), &mut HashMap::new())
    }

    pub fn substitute_all(&self, map: &HashMap<String, Expr>) -> Expr {
        self.map_vars(&|v| map.get(v).cloned(), &mut HashMap::new())
    }

    /// Exact partial derivative with respect to `var`.
    pub fn diff(&self, var: &str) -> Expr {
        self.diff_memo(var, &mut HashMap::new())
    }

    fn diff_memo(&self, var: &str, memo: &mut HashMap<*const Node, Expr>) -> Expr {
        if let Some(e) = memo.get(&self.ptr()) {
            return e.clone();
        }
        let d = match self.node() {
            Node::Var(v) => {
                if v == var {
                    Expr::one()
                } else {
                    Expr::zero()
                }
            }
            Node::Const(_) | Node::Pi => Expr::zero(),
            Node::Add(a, b) => a.diff_memo(var, memo) + b.diff_memo(var, memo),
            Node::Sub(a, b) => a.diff_memo(var, memo) - b.diff_memo(var, memo),
            Node::Mul(a, b) => {
                let (da, db) = (a.diff_memo(var, memo), b.diff_memo(var, memo));
                da * b + a * &db
            }
            Node::Div(a, b) => {
                let (da, db) = (a.diff_memo(var, memo), b.diff_memo(var, memo));
                if db.is_zero() {
                    da / b
                } else {
                    (da * b - a * &db) / b.pow(2)
                }
            }
            Node::Neg(a) => -a.diff_memo(var, memo),
            Node::Pow(a, n) => {
                let da = a.diff_memo(var, memo);
                Expr::int(*n as i64) * a.pow(n - 1) * da
            }
            Node::Func(f, a) => {
                let da = a.diff_memo(var, memo);
                if da.is_zero() {
                    Expr::zero()
                } else {
                    let outer = match f {
                        Func::Ln => Expr::one() / a,
                        Func::Sqrt => Expr::one() / (Expr::int(2) * self),
                        Func::Sin => a.cos(),
                        Func::Cos => -a.sin(),
                        Func::Artanh => Expr::one() / (Expr::one() - a.pow(2)),
                        Func::Cot => -(Expr::one() / a.sin().pow(2)),
                    };
                    outer * da
                }
            }
        };
        memo.insert(self.ptr(), d.clone());
        d
    }

    /// Evaluate with variables resolved by `lookup`.
    pub fn eval_with<S: Scalar>(&self, lookup: &impl Fn(&str) -> Option<S>) -> Result<S, EvalError> {
        let v = match self.node() {
            Node::Var(name) => lookup(name).ok_or_else(|| EvalError::Unbound(name.clone()))?,
            Node::Const(r) => S::from_f64(rational_to_f64(r)),
            Node::Pi => S::from_f64(std::f64::consts::PI),
            Node::Add(a, b) => a.eval_with(lookup)? + b.eval_with(lookup)?,
            Node::Sub(a, b) => a.eval_with(lookup)? - b.eval_with(lookup)?,
            Node::Mul(a, b) => a.eval_with(lookup)? * b.eval_with(lookup)?,
            Node::Div(a, b) => {
                let num = a.eval_with(lookup)?;
                let den = b.eval_with(lookup)?;
                check(self, DomainKind::DivisionByZero, den.value() != 0.0)?;
                num / den
            }
            Node::Neg(a) => -a.eval_with(lookup)?,
            Node::Pow(a, n) => {
                let x = a.eval_with(lookup)?;
                check(self, DomainKind::DivisionByZero, *n >= 0 || x.value() != 0.0)?;
                x.powi(*n)
            }
            Node::Func(f, a) => apply_func(self, *f, a.eval_with(lookup)?)?,
        };
        Ok(v)
    }

    pub fn eval(&self, bindings: &HashMap<String, f64>) -> Result<f64, EvalError> {
        self.eval_with(&|n| bindings.get(n).copied())
    }

    pub fn eval_jet(&self, bindings: &HashMap<String, Jet2>) -> Result<Jet2, EvalError> {
        self.eval_with(&|n| bindings.get(n).copied())
    }

    /// Convenience for small, literal binding lists.
    pub fn eval_at(&self, bindings: &[(&str, f64)]) -> Result<f64, EvalError> {
        self.eval_with(&|n| bindings.iter().find(|(k, _)| *k == n).map(|(_, v)| *v))
    }
}

fn check(e: &Expr, kind: DomainKind, ok: bool) -> Result<(), EvalError> {
    if ok {
        Ok(())
    } else {
        Err(EvalError::Domain { kind, subtree: e.to_string() })
    }
}

pub(crate) fn apply_func<S: Scalar>(e: &Expr, f: Func, x: S) -> Result<S, EvalError> {
    let v = x.value();
    Ok(match f {
        Func::Ln => {
            check(e, DomainKind::LogNonPositive, v > 0.0)?;
            x.ln()
        }
        Func::Sqrt => {
            check(e, DomainKind::SqrtNegative, v >= 0.0)?;
            x.sqrt()
        }
        Func::Sin => x.sin(),
        Func::Cos => x.cos(),
        Func::Artanh => {
            check(e, DomainKind::ArtanhOutOfRange, v.abs() < 1.0)?;
            x.artanh()
        }
        Func::Cot => {
            check(e, DomainKind::CotPole, v.sin() != 0.0)?;
            x.cot()
        }
    })
}

fn fold2(a: &Expr, b: &Expr, op: impl Fn(&Rational, &Rational) -> Rational) -> Option<Expr> {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => Some(Expr::constant(op(x, y))),
        _ => None,
    }
}

impl Add<&Expr> for &Expr {
    type Output = Expr;
    fn add(self, b: &Expr) -> Expr {
        if let Some(e) = fold2(self, b, |x, y| x + y) {
            e
        } else if self.is_zero() {
            b.clone()
        } else if b.is_zero() {
            self.clone()
        } else {
            Expr::new(Node::Add(self.clone(), b.clone()))
        }
    }
}

impl Sub<&Expr> for &Expr {
    type Output = Expr;
    fn sub(self, b: &Expr) -> Expr {
        if let Some(e) = fold2(self, b, |x, y| x - y) {
            e
        } else if b.is_zero() {
            self.clone()
        } else if self.is_zero() {
            -b
        } else {
            Expr::new(Node::Sub(self.clone(), b.clone()))
        }
    }
}

impl Mul<&Expr> for &Expr {
    type Output = Expr;
    fn mul(self, b: &Expr) -> Expr {
        if let Some(e) = fold2(self, b, |x, y| x * y) {
            e
        } else if self.is_zero() || b.is_zero() {
            Expr::zero()
        } else if self.is_one() {
            b.clone()
        } else if b.is_one() {
            self.clone()
        } else if self.as_const().is_some_and(|c| *c == -Rational::one()) {
            -b
        } else {
            Expr::new(Node::Mul(self.clone(), b.clone()))
        }
    }
}

impl Div<&Expr> for &Expr {
    type Output = Expr;
    fn div(self, b: &Expr) -> Expr {
        if !b.is_zero() {
            if let Some(e) = fold2(self, b, |x, y| x / y) {
                return e;
            }
            if self.is_zero() {
                return Expr::zero();
            }
        }
        if b.is_one() {
            return self.clone();
        }
        Expr::new(Node::Div(self.clone(), b.clone()))
    }
}

impl Neg for &Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        match self.node() {
            Node::Const(c) => Expr::constant(-c),
            Node::Neg(a) => a.clone(),
            _ => Expr::new(Node::Neg(self.clone())),
        }
    }
}

macro_rules! forward_binop {
    ($tr:ident, $m:ident) => {
        impl $tr<Expr> for Expr {
            type Output = Expr;
            fn $m(self, b: Expr) -> Expr {
                (&self).$m(&b)
            }
        }
        impl $tr<&Expr> for Expr {
            type Output = Expr;
            fn $m(self, b: &Expr) -> Expr {
                (&self).$m(b)
            }
        }
        impl $tr<Expr> for &Expr {
            type Output = Expr;
            fn $m(self, b: Expr) -> Expr {
                self.$m(&b)
            }
        }
    };
}

forward_binop!(Add, add);
forward_binop!(Sub, sub);
forward_binop!(Mul, mul);
forward_binop!(Div, div);

impl Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        -&self
    }
}

// Printing emits text accepted by `parse`, with just enough parentheses.
const PREC_SUM: u8 = 1;
const PREC_PRODUCT: u8 = 2;
const PREC_UNARY: u8 = 3;
const PREC_ATOM: u8 = 5;

fn precedence(e: &Expr) -> u8 {
    match e.node() {
        Node::Add(..) | Node::Sub(..) => PREC_SUM,
        Node::Mul(..) | Node::Div(..) => PREC_PRODUCT,
        Node::Neg(_) => PREC_UNARY,
        Node::Pow(..) => 4,
        Node::Const(c) if !c.is_integer() => PREC_PRODUCT,
        Node::Const(c) if c.is_negative() => PREC_UNARY,
        _ => PREC_ATOM,
    }
}

fn write_operand(f: &mut fmt::Formatter<'_>, e: &Expr, min_prec: u8) -> fmt::Result {
    if precedence(e) < min_prec {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.node() {
            Node::Var(v) => f.write_str(v),
            Node::Pi => f.write_str("pi"),
            Node::Const(c) => {
                if c.is_integer() {
                    write!(f, "{}", c.numer())
                } else {
                    write!(f, "{}/{}", c.numer(), c.denom())
                }
            }
            Node::Add(a, b) => {
                write_operand(f, a, PREC_SUM)?;
                f.write_str(" + ")?;
                write_operand(f, b, PREC_SUM + 1)
            }
            Node::Sub(a, b) => {
                write_operand(f, a, PREC_SUM)?;
                f.write_str(" - ")?;
                write_operand(f, b, PREC_SUM + 1)
            }
            Node::Mul(a, b) => {
                write_operand(f, a, PREC_PRODUCT)?;
                f.write_str("*")?;
                write_operand(f, b, PREC_PRODUCT + 1)
            }
            Node::Div(a, b) => {
                write_operand(f, a, PREC_PRODUCT)?;
                f.write_str("/")?;
                write_operand(f, b, PREC_PRODUCT + 1)
            }
            Node::Neg(a) => {
                f.write_str("-")?;
                write_operand(f, a, 4)
            }
            Node::Pow(a, n) => {
                write_operand(f, a, PREC_ATOM)?;
                if *n < 0 {
                    write!(f, "^(-{})", -(*n as i64))
                } else {
                    write!(f, "^{n}")
                }
            }
            Node::Func(g, a) => write!(f, "{}({a})", g.name()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x() -> Expr {
        Expr::var("x")
    }

    #[test]
    fn constant_folding() {
        let e = Expr::int(2) * Expr::ratio(3, 4) + Expr::one();
        assert_eq!(e.as_const(), Some(&rational(5, 2)));
        assert!((x() * Expr::zero()).is_zero());
        assert!((Expr::int(5)).diff("x").is_zero());
        assert!(Expr::pi().diff("x").is_zero());
    }

    #[test]
    fn derivative_of_cube() {
        let d = x().pow(3).diff("x");
        assert_eq!(d.eval_at(&[("x", 2.0)]).unwrap(), 12.0);
    }

    #[test]
    fn derivative_of_log() {
        let w3 = Expr::var("w3");
        let d = (Expr::one() + &w3).ln().diff("w3");
        let v = d.eval_at(&[("w3", 0.25)]).unwrap();
        assert!((v - 0.8).abs() < 1e-15);
    }

    #[test]
    fn eval_errors_identify_subtree() {
        let e = (x() - Expr::one()).ln();
        match e.eval_at(&[("x", 0.5)]) {
            Err(EvalError::Domain { kind: DomainKind::LogNonPositive, subtree }) => {
                assert_eq!(subtree, "ln(x - 1)")
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(x().eval_at(&[]), Err(EvalError::Unbound("x".into())));
        let q = Expr::one() / (x() - Expr::int(2));
        assert!(matches!(
            q.eval_at(&[("x", 2.0)]),
            Err(EvalError::Domain { kind: DomainKind::DivisionByZero, .. })
        ));
    }

    #[test]
    fn printing_is_minimal_but_safe() {
        let e = (x() + Expr::one()) * (x() - Expr::ratio(1, 2)).pow(-2);
        assert_eq!(e.to_string(), "(x + 1)*(x - 1/2)^(-2)");
        let n = -(x() * x());
        assert_eq!(n.to_string(), "-(x*x)");
        assert_eq!((x() - (x() - Expr::one())).to_string(), "x - (x - 1)");
        assert_eq!((Expr::int(2) * x()).pow(2).sqrt().to_string(), "sqrt((2*x)^2)");
    }

    #[test]
    fn substitution() {
        let e = x().pow(2) + Expr::var("y");
        let s = e.substitute("x", &Expr::int(3));
        assert_eq!(s.eval_at(&[("y", 1.0)]).unwrap(), 10.0);
        assert_eq!(s.free_vars().into_iter().collect::<Vec<_>>(), vec!["y".to_string()]);
    }
}
