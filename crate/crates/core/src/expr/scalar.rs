//! Number types the expression evaluator and the geometry code are generic over.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// A real-like value: plain `f64`, an order-2 jet, or a first-order dual over either.
///
/// `value()` exposes the base point so domain checks (ln of a non-positive
/// number, division by zero) can be made on the underlying real.
pub trait Scalar:
    Copy
    + Debug
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn from_f64(x: f64) -> Self;
    fn value(&self) -> f64;
    fn sqrt(self) -> Self;
    fn ln(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn artanh(self) -> Self;

    fn cot(self) -> Self {
        self.cos() / self.sin()
    }

    fn powi(self, n: i32) -> Self {
        if n < 0 {
            return Self::from_f64(1.0) / self.powi(-n);
        }
        let mut acc = Self::from_f64(1.0);
        let mut base = self;
        let mut k = n as u32;
        while k > 0 {
            if k & 1 == 1 {
                acc = acc * base;
            }
            base = base * base;
            k >>= 1;
        }
        acc
    }

    fn scale(self, c: f64) -> Self {
        self * Self::from_f64(c)
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn value(&self) -> f64 {
        *self
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn artanh(self) -> Self {
        f64::atanh(self)
    }
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
    fn scale(self, c: f64) -> Self {
        self * c
    }
}

/// Truncated Taylor polynomial `value + d1·ε + ½·d2·ε²` in a single parameter ε.
#[derive(Clone, Copy, Debug, PartialEq, Default, serde::Serialize)]
pub struct Jet2 {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

impl Jet2 {
    pub const fn new(value: f64, d1: f64, d2: f64) -> Self {
        Jet2 { value, d1, d2 }
    }

    pub const fn constant(value: f64) -> Self {
        Jet2 { value, d1: 0.0, d2: 0.0 }
    }

    /// The parameter itself, ε ↦ ε.
    pub const fn param() -> Self {
        Jet2 { value: 0.0, d1: 1.0, d2: 0.0 }
    }

    /// Compose a scalar function with known f, f', f'' at `self.value`.
    #[inline]
    fn chain(self, f: f64, df: f64, d2f: f64) -> Self {
        Jet2 {
            value: f,
            d1: df * self.d1,
            d2: d2f * self.d1 * self.d1 + df * self.d2,
        }
    }
}

impl Add for Jet2 {
    type Output = Jet2;
    #[inline]
    fn add(self, o: Jet2) -> Jet2 {
        Jet2::new(self.value + o.value, self.d1 + o.d1, self.d2 + o.d2)
    }
}

impl Sub for Jet2 {
    type Output = Jet2;
    #[inline]
    fn sub(self, o: Jet2) -> Jet2 {
        Jet2::new(self.value - o.value, self.d1 - o.d1, self.d2 - o.d2)
    }
}

impl Mul for Jet2 {
    type Output = Jet2;
    #[inline]
    fn mul(self, o: Jet2) -> Jet2 {
        Jet2::new(
            self.value * o.value,
            self.d1 * o.value + self.value * o.d1,
            self.d2 * o.value + 2.0 * self.d1 * o.d1 + self.value * o.d2,
        )
    }
}

impl Div for Jet2 {
    type Output = Jet2;
    #[inline]
    fn div(self, o: Jet2) -> Jet2 {
        let inv = 1.0 / o.value;
        let r = o.chain(inv, -inv * inv, 2.0 * inv * inv * inv);
        self * r
    }
}

impl Neg for Jet2 {
    type Output = Jet2;
    #[inline]
    fn neg(self) -> Jet2 {
        Jet2::new(-self.value, -self.d1, -self.d2)
    }
}

impl Scalar for Jet2 {
    fn from_f64(x: f64) -> Self {
        Jet2::constant(x)
    }
    fn value(&self) -> f64 {
        self.value
    }
    fn sqrt(self) -> Self {
        let s = self.value.sqrt();
        self.chain(s, 0.5 / s, -0.25 / (s * s * s))
    }
    fn ln(self) -> Self {
        let x = self.value;
        self.chain(x.ln(), 1.0 / x, -1.0 / (x * x))
    }
    fn sin(self) -> Self {
        let (s, c) = self.value.sin_cos();
        self.chain(s, c, -s)
    }
    fn cos(self) -> Self {
        let (s, c) = self.value.sin_cos();
        self.chain(c, -s, -c)
    }
    fn artanh(self) -> Self {
        let x = self.value;
        let r = 1.0 / (1.0 - x * x);
        self.chain(x.atanh(), r, 2.0 * x * r * r)
    }
    fn scale(self, c: f64) -> Self {
        Jet2::new(self.value * c, self.d1 * c, self.d2 * c)
    }
}

/// First-order dual number `re + eps·δ` over any scalar, used for one extra
/// directional derivative on top of a jet (e.g. ∂ᵢν̃ in the second fundamental form).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<S> {
    pub re: S,
    pub eps: S,
}

impl<S: Scalar> Dual<S> {
    pub fn new(re: S, eps: S) -> Self {
        Dual { re, eps }
    }

    pub fn constant(re: S) -> Self {
        Dual { re, eps: S::from_f64(0.0) }
    }

    #[inline]
    fn chain(self, f: S, df: S) -> Self {
        Dual { re: f, eps: df * self.eps }
    }
}

impl<S: Scalar> Add for Dual<S> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Dual::new(self.re + o.re, self.eps + o.eps)
    }
}

impl<S: Scalar> Sub for Dual<S> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Dual::new(self.re - o.re, self.eps - o.eps)
    }
}

impl<S: Scalar> Mul for Dual<S> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Dual::new(self.re * o.re, self.eps * o.re + self.re * o.eps)
    }
}

impl<S: Scalar> Div for Dual<S> {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let q = self.re / o.re;
        Dual::new(q, (self.eps - q * o.eps) / o.re)
    }
}

impl<S: Scalar> Neg for Dual<S> {
    type Output = Self;
    fn neg(self) -> Self {
        Dual::new(-self.re, -self.eps)
    }
}

impl<S: Scalar> Scalar for Dual<S> {
    fn from_f64(x: f64) -> Self {
        Dual::constant(S::from_f64(x))
    }
    fn value(&self) -> f64 {
        self.re.value()
    }
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        self.chain(s, S::from_f64(0.5) / s)
    }
    fn ln(self) -> Self {
        self.chain(self.re.ln(), S::from_f64(1.0) / self.re)
    }
    fn sin(self) -> Self {
        self.chain(self.re.sin(), self.re.cos())
    }
    fn cos(self) -> Self {
        self.chain(self.re.cos(), -self.re.sin())
    }
    fn artanh(self) -> Self {
        let one = S::from_f64(1.0);
        self.chain(self.re.artanh(), one / (one - self.re * self.re))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: Jet2, b: Jet2) -> bool {
        (a.value - b.value).abs() < 1e-14 && (a.d1 - b.d1).abs() < 1e-13 && (a.d2 - b.d2).abs() < 1e-12
    }

    #[test]
    fn jet_square() {
        let x = Jet2::new(1.0, 1.0, 0.0);
        assert_eq!(x * x, Jet2::new(1.0, 2.0, 2.0));
        assert_eq!(x.powi(2), Jet2::new(1.0, 2.0, 2.0));
    }

    #[test]
    fn jet_ln_and_sqrt() {
        let x = Jet2::new(0.0, 1.0, 0.0);
        assert!(close((Jet2::constant(1.0) + x).ln(), Jet2::new(0.0, 1.0, -1.0)));
        let y = Jet2::new(1.0, 2.0, 0.0);
        assert!(close(y.sqrt(), Jet2::new(1.0, 1.0, -1.0)));
    }

    #[test]
    fn jet_division_matches_inverse_series() {
        // 1/(1+ε) = 1 − ε + ε²
        let x = Jet2::new(1.0, 1.0, 0.0);
        assert!(close(Jet2::constant(1.0) / x, Jet2::new(1.0, -1.0, 2.0)));
    }

    #[test]
    fn negative_powers() {
        assert!((Scalar::powi(2.0f64, -3) - 0.125).abs() < 1e-16);
        let x = Jet2::new(2.0, 1.0, 0.0);
        let a = x.powi(-2);
        let b = Jet2::constant(1.0) / (x * x);
        assert!(close(a, b));
    }

    #[test]
    fn dual_over_jet() {
        // d/dθ of sin(θ) at θ with jet slot untouched
        let th = Dual::new(Jet2::constant(0.3), Jet2::constant(1.0));
        let s = th.sin();
        assert!((s.eps.value - 0.3f64.cos()).abs() < 1e-15);
        let c = th.cot();
        assert!((c.eps.value + 1.0 / 0.3f64.sin().powi(2)).abs() < 1e-12);
    }
}
