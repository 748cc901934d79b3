//! Recursive-descent parser.
//!
//! ```text
//! expr   := term (('+'|'-') term)*
//! term   := factor (('*'|'/') factor)*
//! factor := '-' factor | base ('^' exponent)?
//! exponent := integer | '-' integer | '(' '-'? integer ')'
//! base   := number | ident | '(' expr ')' | func '(' expr ')'
//! ```
//!
//! Unary minus and negative exponents go beyond the minimal grammar; they are
//! needed so that every printed expression parses back.

use super::{Expr, Func, Rational};
use num_bigint::BigInt;
use num_traits::{One, Zero};

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
#[error("{message} at byte {offset}")]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
}

pub fn parse(text: &str) -> Result<Expr, ParseError> {
    let mut p = Parser { src: text.as_bytes(), pos: 0 };
    p.skip_ws();
    if p.at_end() {
        return Err(p.err("empty expression"));
    }
    let e = p.expr()?;
    p.skip_ws();
    if !p.at_end() {
        return Err(p.err(&format!("unexpected `{}`", p.src[p.pos] as char)));
    }
    Ok(e)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn err(&self, msg: &str) -> ParseError {
        ParseError { offset: self.pos, message: msg.to_string() }
    }

    fn at_end(&self) -> bool {
        self.pos >= self.src.len()
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(|c| c.is_ascii_whitespace()) {
            self.pos += 1;
        }
    }

    fn eat(&mut self, c: u8) -> bool {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<(), ParseError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.err(&format!("expected `{}`", c as char)))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(b'+') {
                lhs = lhs + self.term()?;
            } else if self.eat(b'-') {
                lhs = lhs - self.term()?;
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.factor()?;
        loop {
            if self.eat(b'*') {
                lhs = lhs * self.factor()?;
            } else if self.eat(b'/') {
                lhs = lhs / self.factor()?;
            } else {
                return Ok(lhs);
            }
        }
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        if self.eat(b'-') {
            return Ok(-self.factor()?);
        }
        let base = self.base()?;
        if self.eat(b'^') {
            let n = self.exponent()?;
            return Ok(base.pow(n));
        }
        Ok(base)
    }

    fn exponent(&mut self) -> Result<i32, ParseError> {
        let paren = self.eat(b'(');
        let neg = self.eat(b'-');
        self.skip_ws();
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err("expected integer exponent"));
        }
        let digits = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        let n: i32 = digits.parse().map_err(|_| ParseError { offset: start, message: "exponent too large".into() })?;
        if paren {
            self.expect(b')')?;
        }
        Ok(if neg { -n } else { n })
    }

    fn base(&mut self) -> Result<Expr, ParseError> {
        self.skip_ws();
        match self.peek() {
            None => Err(self.err("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => {
                let start = self.pos;
                while self.peek().is_some_and(|c| c.is_ascii_alphanumeric() || c == b'_') {
                    self.pos += 1;
                }
                let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
                if name == "pi" {
                    return Ok(Expr::pi());
                }
                if let Some(f) = Func::from_name(name) {
                    self.skip_ws();
                    if self.peek() != Some(b'(') {
                        return Err(ParseError {
                            offset: start,
                            message: format!("reserved name `{name}` used as a variable"),
                        });
                    }
                    self.pos += 1;
                    let arg = self.expr()?;
                    self.expect(b')')?;
                    return Ok(arg.apply(f));
                }
                self.skip_ws();
                if self.peek() == Some(b'(') {
                    return Err(ParseError { offset: start, message: format!("unknown function `{name}`") });
                }
                Ok(Expr::var(name))
            }
            Some(c) => Err(self.err(&format!("unexpected `{}`", c as char))),
        }
    }

    /// Integer or decimal literal (optionally with an exponent), converted exactly.
    fn number(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        let mut mantissa = String::new();
        let mut frac_digits = 0i64;
        let mut seen_dot = false;
        while let Some(c) = self.peek() {
            if c.is_ascii_digit() {
                mantissa.push(c as char);
                if seen_dot {
                    frac_digits += 1;
                }
            } else if c == b'.' && !seen_dot {
                seen_dot = true;
            } else {
                break;
            }
            self.pos += 1;
        }
        if mantissa.is_empty() {
            return Err(ParseError { offset: start, message: "malformed number".into() });
        }
        let mut exp10 = -frac_digits;
        if matches!(self.peek(), Some(b'e' | b'E')) {
            let save = self.pos;
            self.pos += 1;
            let neg = match self.peek() {
                Some(b'-') => {
                    self.pos += 1;
                    true
                }
                Some(b'+') => {
                    self.pos += 1;
                    false
                }
                _ => false,
            };
            let ds = self.pos;
            while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                self.pos += 1;
            }
            if ds == self.pos {
                // not an exponent after all (e.g. "2e" would be a syntax error anyway)
                self.pos = save;
            } else {
                let e: i64 = std::str::from_utf8(&self.src[ds..self.pos])
                    .unwrap()
                    .parse()
                    .map_err(|_| ParseError { offset: ds, message: "exponent too large".into() })?;
                exp10 += if neg { -e } else { e };
            }
        }
        let m: BigInt = mantissa.parse().unwrap();
        let ten = BigInt::from(10);
        let r = if exp10 >= 0 {
            Rational::from_integer(m * num_traits::pow(ten, exp10 as usize))
        } else {
            Rational::new(m, num_traits::pow(ten, (-exp10) as usize))
        };
        debug_assert!(!r.denom().is_zero() && r.denom() >= &BigInt::one());
        Ok(Expr::constant(r))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{rational, Node};

    #[test]
    fn gallery_surface_is_a_five_term_sum() {
        let e = parse("a*x + a*y + x*y - c1*x^3 - c2*y^3").unwrap();
        let mut terms = 0;
        let mut cur = e;
        loop {
            let next = match cur.node() {
                Node::Add(a, _) | Node::Sub(a, _) => a.clone(),
                _ => break,
            };
            terms += 1;
            cur = next;
        }
        assert_eq!(terms + 1, 5);
    }

    #[test]
    fn zero_literal() {
        assert!(parse("0").unwrap().is_zero());
    }

    #[test]
    fn log_over_sum() {
        let e = parse("ln(1+w3)/2").unwrap();
        match e.node() {
            Node::Div(num, den) => {
                assert!(matches!(num.node(), Node::Func(Func::Ln, arg) if matches!(arg.node(), Node::Add(..))));
                assert_eq!(den.as_const(), Some(&rational(2, 1)));
            }
            _ => panic!("expected a quotient, got {e}"),
        }
    }

    #[test]
    fn decimals_are_exact() {
        assert_eq!(parse("0.3").unwrap().as_const(), Some(&rational(3, 10)));
        assert_eq!(parse("1.5e-2").unwrap().as_const(), Some(&rational(3, 200)));
    }

    #[test]
    fn errors_carry_offsets() {
        let e = parse("x + * y").unwrap_err();
        assert_eq!(e.offset, 4);
        let e = parse("2*ln + 1").unwrap_err();
        assert_eq!(e.offset, 2);
        assert!(e.message.contains("reserved"));
        assert!(parse("(x + 1").is_err());
        assert!(parse("foo(x)").is_err());
        assert!(parse("").is_err());
    }

    #[test]
    fn pi_is_a_constant() {
        let e = parse("2*pi").unwrap();
        assert!(e.free_vars().is_empty());
        assert!((e.eval_at(&[]).unwrap() - std::f64::consts::TAU).abs() < 1e-15);
    }

    #[test]
    fn unary_minus_and_negative_exponents() {
        let e = parse("-x^2 + x^(-1) + y^-2").unwrap();
        let v = e.eval_at(&[("x", 2.0), ("y", 4.0)]).unwrap();
        assert_eq!(v, -4.0 + 0.5 + 1.0 / 16.0);
    }

    #[test]
    fn polynomial_values() {
        let p = parse("1 - 15*a^4 + 2*a^6").unwrap();
        assert_eq!(p.eval_at(&[("a", 0.5)]).unwrap(), 0.09375);
        // exact value at a = 13/25, computed in rationals as an independent oracle
        let exact = Rational::one() - Rational::from_integer(15.into()) * num_traits::pow(rational(13, 25), 4)
            + Rational::from_integer(2.into()) * num_traits::pow(rational(13, 25), 6);
        let v = p.eval_at(&[("a", 0.52)]).unwrap();
        assert!((v - crate::expr::rational_to_f64(&exact)).abs() < 1e-15);
        assert!((v + 0.0572).abs() < 1e-4 && v < 0.0);
        assert_eq!(parse("x^2").unwrap().eval_at(&[("x", 3.0)]).unwrap(), 9.0);
    }
}
