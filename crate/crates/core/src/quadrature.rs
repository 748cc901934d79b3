//! Integration over the upper unit hemisphere and its equator.
//!
//! The hemisphere is parametrized by (t, φ) with t = ω₃ = cos θ, so that
//! dμ = sin θ dθ dφ = dt dφ on [0,1]×[0,2π). Gauss–Legendre in t is exact for
//! polynomials in ω₃ and the periodic trapezoid rule in φ is spectrally accurate.

use crate::expr::{rational, rational_to_f64, EvalError, Expr, Program, Rational};
use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rayon::prelude::*;
use std::f64::consts::{LN_2, PI, TAU};
use std::fmt;

/// Exponents of ω₁^a ω₂^b ω₃^c.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize)]
pub struct Moment {
    pub a: u32,
    pub b: u32,
    pub c: u32,
}

impl Moment {
    pub fn new(a: u32, b: u32, c: u32) -> Self {
        Moment { a, b, c }
    }

    pub fn expr(&self) -> Expr {
        Expr::var("w1").pow(self.a as i32) * Expr::var("w2").pow(self.b as i32) * Expr::var("w3").pow(self.c as i32)
    }
}

fn double_factorial(n: i64) -> BigInt {
    let mut acc = BigInt::one();
    let mut k = n;
    while k > 1 {
        acc *= k;
        k -= 2;
    }
    acc
}

/// ∫₀^{2π} cos^a φ sin^b φ dφ divided by π.
pub fn boundary_moment(a: u32, b: u32) -> Rational {
    if a % 2 == 1 || b % 2 == 1 {
        return Rational::zero();
    }
    let (a, b) = (a as i64, b as i64);
    Rational::new(
        BigInt::from(2) * double_factorial(a - 1) * double_factorial(b - 1),
        double_factorial(a + b),
    )
}

/// ∫₀¹ (1−t²)^m t^c dt = m!·2^m / ∏_{k=0..m} (c+1+2k).
fn polar_factor(m: u32, c: u32) -> Rational {
    let mut num = BigInt::one();
    for k in 1..=m {
        num *= 2 * k;
    }
    let mut den = BigInt::one();
    for k in 0..=m {
        den *= c + 1 + 2 * k;
    }
    Rational::new(num, den)
}

/// ∫_{𝕊²₊} ω₁^a ω₂^b ω₃^c dμ divided by π, exactly.
pub fn surface_moment(m: Moment) -> Rational {
    if m.a % 2 == 1 || m.b % 2 == 1 {
        return Rational::zero();
    }
    boundary_moment(m.a, m.b) * polar_factor((m.a + m.b) / 2, m.c)
}

/// All moments with a+b+c ≤ `max_degree`, optionally skipping the vanishing ones.
pub fn moment_table(max_degree: u32, include_zero: bool) -> Vec<(Moment, Rational)> {
    let mut out = Vec::new();
    for deg in 0..=max_degree {
        for a in (0..=deg).rev() {
            for b in (0..=deg - a).rev() {
                let m = Moment::new(a, b, deg - a - b);
                let v = surface_moment(m);
                if include_zero || !v.is_zero() {
                    out.push((m, v));
                }
            }
        }
    }
    out
}

pub fn boundary_moment_table(max_degree: u32, include_zero: bool) -> Vec<(Moment, Rational)> {
    let mut out = Vec::new();
    for deg in 0..=max_degree {
        for a in (0..=deg).rev() {
            let m = Moment::new(a, deg - a, 0);
            let v = boundary_moment(m.a, m.b);
            if include_zero || !v.is_zero() {
                out.push((m, v));
            }
        }
    }
    out
}

/// Gauss–Legendre nodes and weights on [-1, 1], by Newton iteration on Pₙ.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { z } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pm) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub struct QuadratureGrid {
    pub n_polar: usize,
    pub n_azimuthal: usize,
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum QuadError {
    #[error("invalid grid {n_polar}x{n_azimuthal}: need n_polar >= 8, even n_azimuthal >= 16")]
    InvalidGrid { n_polar: usize, n_azimuthal: usize },
    #[error("integrand variable `{0}` is not one of w1, w2, w3")]
    Variable(String),
    #[error("at node (t={t:.6}, phi={phi:.6}): {source}")]
    Eval {
        t: f64,
        phi: f64,
        #[source]
        source: EvalError,
    },
}

impl Default for QuadratureGrid {
    fn default() -> Self {
        QuadratureGrid { n_polar: 64, n_azimuthal: 128 }
    }
}

/// One row of the tensor grid: fixed t, all φ.
#[derive(Clone, Debug)]
pub struct PolarRow {
    pub t: f64,
    /// Gauss weight in t times the φ step 2π/n.
    pub weight: f64,
}

impl QuadratureGrid {
    pub fn new(n_polar: usize, n_azimuthal: usize) -> Result<Self, QuadError> {
        if n_polar < 8 || n_azimuthal < 16 || n_azimuthal % 2 == 1 {
            return Err(QuadError::InvalidGrid { n_polar, n_azimuthal });
        }
        Ok(QuadratureGrid { n_polar, n_azimuthal })
    }

    pub fn refined(&self) -> Self {
        QuadratureGrid { n_polar: 2 * self.n_polar, n_azimuthal: self.n_azimuthal }
    }

    pub fn rows(&self) -> Vec<PolarRow> {
        let (x, w) = gauss_legendre(self.n_polar);
        let dphi = TAU / self.n_azimuthal as f64;
        x.iter()
            .zip(&w)
            .map(|(&xi, &wi)| PolarRow { t: 0.5 * (xi + 1.0), weight: 0.5 * wi * dphi })
            .collect()
    }

    pub fn phis(&self) -> Vec<f64> {
        (0..self.n_azimuthal).map(|k| TAU * k as f64 / self.n_azimuthal as f64).collect()
    }

    /// ∫_{𝕊²₊} f dμ for `f(t, φ)`. Rows are evaluated in parallel and summed in a
    /// fixed order, so results are bit-reproducible.
    pub fn integrate<E, F>(&self, f: F) -> Result<f64, E>
    where
        E: Send,
        F: Fn(f64, f64) -> Result<f64, E> + Sync,
    {
        self.integrate_array(|t, phi| f(t, phi).map(|v| [v])).map(|[v]| v)
    }

    /// Component-wise version of [`integrate`](Self::integrate) for several integrands sharing work.
    pub fn integrate_array<const K: usize, E, F>(&self, f: F) -> Result<[f64; K], E>
    where
        E: Send,
        F: Fn(f64, f64) -> Result<[f64; K], E> + Sync,
    {
        let phis = self.phis();
        let rows = self.rows();
        let partial: Vec<Result<[f64; K], E>> = rows
            .par_iter()
            .map(|row| {
                let mut s = [0.0; K];
                for &phi in &phis {
                    let v = f(row.t, phi)?;
                    for k in 0..K {
                        s[k] += v[k];
                    }
                }
                Ok(s.map(|x| x * row.weight))
            })
            .collect();
        let mut total = [0.0; K];
        for p in partial {
            let p = p?;
            for k in 0..K {
                total[k] += p[k];
            }
        }
        Ok(total)
    }
}

/// Unit vector ω(t, φ) on the hemisphere.
pub fn omega(t: f64, phi: f64) -> [f64; 3] {
    let s = (1.0 - t * t).max(0.0).sqrt();
    [s * phi.cos(), s * phi.sin(), t]
}

fn hemisphere_program(e: &Expr) -> Result<Program, QuadError> {
    for v in e.free_vars() {
        if !matches!(v.as_str(), "w1" | "w2" | "w3") {
            return Err(QuadError::Variable(v));
        }
    }
    Program::single(e, &["w1", "w2", "w3"]).map_err(|e| match e {
        EvalError::Unbound(v) => QuadError::Variable(v),
        other => QuadError::Eval { t: f64::NAN, phi: f64::NAN, source: other },
    })
}

/// ∫_{𝕊²₊} e(ω) dμ for an expression in w1, w2, w3.
pub fn integrate_surface(e: &Expr, grid: &QuadratureGrid) -> Result<f64, QuadError> {
    let prog = hemisphere_program(e)?;
    grid.integrate(|t, phi| {
        prog.eval(&omega(t, phi)).map_err(|source| QuadError::Eval { t, phi, source })
    })
}

/// ∫_{∂𝕊²₊} e dS along the equator with the n-point trapezoid rule.
pub fn integrate_boundary(e: &Expr, n: usize) -> Result<f64, QuadError> {
    let prog = hemisphere_program(e)?;
    integrate_equator(n, |phi| {
        prog.eval(&omega(0.0, phi)).map_err(|source| QuadError::Eval { t: 0.0, phi, source })
    })
}

pub fn integrate_equator<E>(n: usize, f: impl Fn(f64) -> Result<f64, E>) -> Result<f64, E> {
    let h = TAU / n as f64;
    let mut s = 0.0;
    for k in 0..n {
        s += f(h * k as f64)?;
    }
    Ok(s * h)
}

/// A value π·(p + q·ln 2) with rational p, q.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientVector {
    pub p: Rational,
    pub q: Rational,
    /// |x − π(p + q ln 2)| for the value it was recovered from.
    pub residual: f64,
}

impl CoefficientVector {
    pub fn exact(p: Rational, q: Rational) -> Self {
        CoefficientVector { p, q, residual: 0.0 }
    }

    pub fn value(&self) -> f64 {
        PI * (rational_to_f64(&self.p) + rational_to_f64(&self.q) * LN_2)
    }

    pub fn same_as(&self, other: &CoefficientVector) -> bool {
        self.p == other.p && self.q == other.q
    }
}

impl fmt::Display for CoefficientVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.p.is_zero(), self.q.is_zero()) {
            (true, true) => write!(f, "0"),
            (false, true) => write!(f, "pi*({})", self.p),
            (true, false) => write!(f, "pi*({})*ln2", self.q),
            (false, false) => write!(f, "pi*({} + ({})*ln2)", self.p, self.q),
        }
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum RecoveryError {
    #[error("no rational fit pi*(p + q ln2) to {x:e} within {tol:e} (best residual {best:e})")]
    NoRationalFit { x: f64, tol: f64, best: f64 },
    #[error("value {0:e} outside the supported range")]
    OutOfRange(f64),
}

/// Largest denominator accepted for p.
pub const MAX_DENOMINATOR: i64 = 1 << 20;

/// Bounds on the ln 2 coefficient q = n/d that are searched.
const Q_MAX_DEN: i64 = 12;
const Q_MAX_ABS: i64 = 8;

/// Best rational approximation of `y` with denominator ≤ `max_den` that lies
/// within `tol`, taking the first continued-fraction convergent that does.
pub fn rational_approx(y: f64, tol: f64, max_den: i64) -> Option<(i64, i64)> {
    if !y.is_finite() {
        return None;
    }
    let (mut h0, mut h1) = (0i128, 1i128);
    let (mut k0, mut k1) = (1i128, 0i128);
    let mut x = y;
    for _ in 0..64 {
        let a = x.floor();
        if a.abs() > 1e15 {
            return None;
        }
        let ai = a as i128;
        let h2 = ai * h1 + h0;
        let k2 = ai * k1 + k0;
        if k2 > max_den as i128 {
            return None;
        }
        (h0, h1, k0, k1) = (h1, h2, k1, k2);
        if (y - h1 as f64 / k1 as f64).abs() <= tol {
            return Some((h1 as i64, k1 as i64));
        }
        let frac = x - a;
        if frac == 0.0 {
            return None;
        }
        x = 1.0 / frac;
    }
    None
}

/// Recover rationals p, q with x ≈ π(p + q ln 2).
///
/// For each candidate q = n/d (small d, |q| ≤ 8) the remainder x/π − q ln 2 is
/// reconstructed by continued fractions; among all fits within `tol` the one
/// with the smallest den(p)·den(q) wins (ties: smaller residual).
pub fn recover_coefficients(x: f64, tol: f64) -> Result<CoefficientVector, RecoveryError> {
    if !x.is_finite() || x.abs() >= 1e12 {
        return Err(RecoveryError::OutOfRange(x));
    }
    let y = x / PI;
    let ytol = tol / PI;
    let mut best: Option<(i128, f64, CoefficientVector)> = None;
    let mut best_residual = f64::INFINITY;
    for d in 1..=Q_MAX_DEN {
        for n in -Q_MAX_ABS * d..=Q_MAX_ABS * d {
            if n.gcd(&d) != 1 && n != 0 {
                continue;
            }
            if n == 0 && d != 1 {
                continue;
            }
            let qf = n as f64 / d as f64;
            let rem = y - qf * LN_2;
            let Some((pn, pd)) = rational_approx(rem, ytol, MAX_DENOMINATOR) else {
                continue;
            };
            let cv = CoefficientVector { p: rational(pn, pd), q: rational(n, d), residual: 0.0 };
            let r = (x - cv.value()).abs();
            best_residual = best_residual.min(r);
            if r > tol {
                continue;
            }
            let score = pd as i128 * d as i128;
            let better = match &best {
                None => true,
                Some((s, br, _)) => score < *s || (score == *s && r < *br),
            };
            if better {
                best = Some((score, r, CoefficientVector { residual: r, ..cv }));
            }
        }
    }
    best.map(|(_, _, cv)| cv).ok_or(RecoveryError::NoRationalFit { x, tol, best: best_residual })
}

/// Parse "p" or "n/d" into an exact rational (used for pinned reference values).
pub fn parse_rational(s: &str) -> Option<Rational> {
    let s = s.trim();
    if let Some((n, d)) = s.split_once('/') {
        let n: BigInt = n.trim().parse().ok()?;
        let d: BigInt = d.trim().parse().ok()?;
        if d.is_zero() {
            return None;
        }
        Some(Rational::new(n, d))
    } else {
        Some(Rational::from_integer(s.parse().ok()?))
    }
}

/// Split a rational into (numerator, denominator) as i64 when it fits.
pub fn rational_parts(r: &Rational) -> (i64, i64) {
    let n = r.numer().to_i64().unwrap_or(if r.is_negative() { i64::MIN } else { i64::MAX });
    let d = r.denom().to_i64().unwrap_or(i64::MAX);
    (n, d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments_match_hand_values() {
        assert_eq!(surface_moment(Moment::new(2, 0, 1)), rational(1, 4));
        assert_eq!(surface_moment(Moment::new(0, 0, 1)), rational(1, 1));
        assert_eq!(surface_moment(Moment::new(0, 0, 0)), rational(2, 1));
        assert_eq!(surface_moment(Moment::new(1, 0, 0)), rational(0, 1));
        assert_eq!(surface_moment(Moment::new(4, 0, 0)), rational(2, 5));
        assert_eq!(surface_moment(Moment::new(2, 2, 0)), rational(2, 15));
    }

    #[test]
    fn boundary_moments() {
        assert_eq!(boundary_moment(2, 0), rational(1, 1));
        assert_eq!(boundary_moment(0, 0), rational(2, 1));
        assert_eq!(boundary_moment(4, 0), rational(3, 4));
        assert_eq!(boundary_moment(3, 1), rational(0, 1));
    }

    #[test]
    fn polar_factor_matches_binomial_sum() {
        // independent oracle: Σ_k C(m,k)(−1)^k / (2k+c+1)
        for m in 0..7u32 {
            for c in 0..7u32 {
                let mut s = Rational::zero();
                let mut binom = BigInt::one();
                for k in 0..=m {
                    let term = Rational::new(binom.clone(), BigInt::from(2 * k + c + 1));
                    if k % 2 == 0 {
                        s += term;
                    } else {
                        s -= term;
                    }
                    binom = binom * (m - k) / (k + 1);
                }
                assert_eq!(polar_factor(m, c), s, "m={m} c={c}");
            }
        }
    }

    #[test]
    fn table_sizes() {
        assert_eq!(moment_table(4, false).len(), 14);
        assert_eq!(moment_table(0, false).len(), 1);
        assert_eq!(moment_table(2, true).len(), 10);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(10);
        for deg in 0..20 {
            let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg)).sum();
            let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
            assert!((s - exact).abs() < 1e-14, "deg {deg}: {s} vs {exact}");
        }
    }

    #[test]
    fn continued_fraction_basics() {
        assert_eq!(rational_approx(0.75, 1e-14, 100), Some((3, 4)));
        assert_eq!(rational_approx(-2.5, 1e-14, 100), Some((-5, 2)));
        assert_eq!(rational_approx(113.0 / 30240.0, 1e-15, MAX_DENOMINATOR), Some((113, 30240)));
    }

    #[test]
    fn recover_trivial_values() {
        let z = recover_coefficients(0.0, 1e-12).unwrap();
        assert!(z.p.is_zero() && z.q.is_zero());
        let c = recover_coefficients(PI * 23.0 / 14.0, 1e-12).unwrap();
        assert_eq!((c.p, c.q), (rational(23, 14), rational(0, 1)));
        let w = recover_coefficients(4.0 * PI * (LN_2 - 1.0), 1e-12).unwrap();
        assert_eq!((w.p, w.q), (rational(-4, 1), rational(4, 1)));
    }

    #[test]
    fn grid_validation() {
        assert!(QuadratureGrid::new(4, 128).is_err());
        assert!(QuadratureGrid::new(64, 15).is_err());
        assert!(QuadratureGrid::new(64, 17).is_err());
        assert!(QuadratureGrid::new(8, 16).is_ok());
    }
}
