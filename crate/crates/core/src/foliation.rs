//! Leaf families φ_λ(ω) = λv e₁ + λω + λ²f(λ, ω) over the upper unit
//! hemisphere, and numeric checks of whether they foliate a deleted
//! half-ball around the origin.
//!
//! Everything here is sampled: disjointness, monotonicity of the ray
//! intersection and coverage are checked on grids. Smoothness of the leaf map
//! is not certified, and reports say so.

use std::f64::consts::{FRAC_PI_2, PI};

use rayon::prelude::*;
use serde::Serialize;

use crate::expr::{parse, Dual, EvalError, Expr, ParseError, Program, Scalar};

pub const FAMILY_VARS: [&str; 4] = ["lambda", "w1", "w2", "w3"];

/// Tolerance on f₃ along the equator.
pub const BOUNDARY_TOL: f64 = 1e-12;
/// Distances below this count as contact.
pub const CONTACT_TOL: f64 = 1e-9;
/// Upper edge of the band where contact can be neither confirmed nor excluded.
pub const INCONCLUSIVE_TOL: f64 = 1e-6;

const RAY_TOL: f64 = 1e-12;
const RAY_MAX_ITER: usize = 200;
const SEED_GRID: usize = 32;
const DESCENT_STEPS: usize = 50;
const MESH_THETA: usize = 64;
const MESH_PHI: usize = 128;

#[derive(Debug, thiserror::Error)]
pub enum FoliationError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("invalid leaf family: {0}")]
    InvalidFamily(String),
    #[error("ray {theta0:?} misses the leaf at lambda = {lambda}")]
    NoIntersection { lambda: f64, theta0: [f64; 3] },
    #[error("ray fixed point did not converge at lambda = {lambda} (last step {step:e})")]
    NoConvergence { lambda: f64, step: f64 },
    #[error("leaves {lambda1} and {lambda2} are {distance:e} apart: contact cannot be decided, refine the grid")]
    Inconclusive { lambda1: f64, lambda2: f64, distance: f64 },
}

#[derive(Debug, thiserror::Error)]
pub enum FamilyFileError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: {source}")]
    Expr { line: usize, source: ParseError },
    #[error("missing key `{0}`")]
    Missing(&'static str),
    #[error(transparent)]
    Family(#[from] FoliationError),
}

/// Point on the unit sphere from polar angle θ (from e₃) and azimuth φ.
pub fn sphere_point<S: Scalar>(theta: S, phi: S) -> [S; 3] {
    let s = theta.sin();
    [s * phi.cos(), s * phi.sin(), theta.cos()]
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Clone, Debug)]
pub struct LeafFamily {
    pub v: f64,
    pub f: [Expr; 3],
    pub lambda_max: f64,
    program: Program,
}

impl LeafFamily {
    /// Validates v ≥ 0, λ_max > 0, the variables used, and the equator condition
    /// on f₃; also samples f to make sure it is finite on the parameter domain.
    pub fn new(v: f64, f: [Expr; 3], lambda_max: f64) -> Result<LeafFamily, FoliationError> {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(FoliationError::InvalidFamily(format!("v must be a finite real ≥ 0, got {v}")));
        }
        if !(lambda_max > 0.0 && lambda_max.is_finite()) {
            return Err(FoliationError::InvalidFamily(format!("lambda_max must be positive, got {lambda_max}")));
        }
        for e in &f {
            if let Some(bad) = e.free_vars().into_iter().find(|x| !FAMILY_VARS.contains(&x.as_str())) {
                return Err(FoliationError::InvalidFamily(format!("f uses unknown variable `{bad}`")));
            }
        }
        let program = Program::compile(&f, &FAMILY_VARS)?;
        let fam = LeafFamily { v, f, lambda_max, program };

        for i in 0..=8 {
            let lambda = lambda_max * i as f64 / 8.0;
            for k in 0..64 {
                let phi = 2.0 * PI * k as f64 / 64.0;
                let f3 = fam.f_at(lambda, [phi.cos(), phi.sin(), 0.0])?[2];
                if f3.abs() >= BOUNDARY_TOL {
                    return Err(FoliationError::InvalidFamily(format!(
                        "f3 = {f3:e} on the equator at lambda = {lambda}, phi = {phi}"
                    )));
                }
            }
        }
        let c = fam.bound_c()?;
        if !c.is_finite() {
            return Err(FoliationError::InvalidFamily("f or its derivatives are unbounded on the samples".into()));
        }
        Ok(fam)
    }

    /// Unperturbed family: hemispheres of radius λ centred at λv e₁.
    pub fn spheres(v: f64, lambda_max: f64) -> Result<LeafFamily, FoliationError> {
        LeafFamily::new(v, [Expr::zero(), Expr::zero(), Expr::zero()], lambda_max)
    }

    /// Constant perturbation f ≡ c (c₃ must vanish).
    pub fn constant(v: f64, c: [f64; 3], lambda_max: f64) -> Result<LeafFamily, FoliationError> {
        LeafFamily::new(v, c.map(Expr::from_f64), lambda_max)
    }

    pub fn f_at<S: Scalar>(&self, lambda: S, omega: [S; 3]) -> Result<[S; 3], EvalError> {
        let mut out = [S::from_f64(0.0); 3];
        let mut scratch = Vec::new();
        self.program.eval_into(&[lambda, omega[0], omega[1], omega[2]], &mut scratch, &mut out)?;
        Ok(out)
    }

    /// φ_λ(ω).
    pub fn leaf_point<S: Scalar>(&self, lambda: S, omega: [S; 3]) -> Result<[S; 3], EvalError> {
        let f = self.f_at(lambda, omega)?;
        let l2 = lambda * lambda;
        Ok([
            lambda * S::from_f64(self.v) + lambda * omega[0] + l2 * f[0],
            lambda * omega[1] + l2 * f[1],
            lambda * omega[2] + l2 * f[2],
        ])
    }

    pub fn leaf_point_polar(&self, lambda: f64, theta: f64, phi: f64) -> Result<[f64; 3], EvalError> {
        self.leaf_point(lambda, sphere_point(theta, phi))
    }

    /// Sampled sup of |f| + |Df| over [0, λ_max] × 𝕊²₊ (Df in λ and ω, Frobenius norm).
    pub fn bound_c(&self) -> Result<f64, EvalError> {
        let mut c: f64 = 0.0;
        for i in 0..=8 {
            let lambda = self.lambda_max * i as f64 / 8.0;
            for j in 0..=8 {
                let theta = FRAC_PI_2 * j as f64 / 8.0;
                for k in 0..16 {
                    let omega = sphere_point(theta, 2.0 * PI * k as f64 / 16.0);
                    let f = self.f_at(lambda, omega)?;
                    let mut df2 = 0.0;
                    for d in 0..4 {
                        let mut x = [Dual::constant(lambda), Dual::constant(omega[0]), Dual::constant(omega[1]), Dual::constant(omega[2])];
                        x[d].eps = 1.0;
                        let fd = self.f_at(x[0], [x[1], x[2], x[3]])?;
                        df2 += fd.iter().map(|y| y.eps * y.eps).sum::<f64>();
                    }
                    c = c.max(norm(f) + df2.sqrt());
                }
            }
        }
        Ok(c)
    }
}

/// The ray t ↦ tθ₀ meets leaf λ at t·θ₀ = φ_λ(ω).
#[derive(Clone, Copy, Debug, Serialize)]
pub struct RayIntersection {
    pub t: f64,
    pub omega: [f64; 3],
    pub iterations: usize,
}

/// Fixed-point iteration: given ω, c = λv e₁ + λ²f(λ, ω) and t is the
/// non-negative (outer) root of |tθ₀ − c| = λ; then ω ← (tθ₀ − c)/λ.
pub fn ray_intersect(fam: &LeafFamily, lambda: f64, theta0: [f64; 3]) -> Result<RayIntersection, FoliationError> {
    let n0 = norm(theta0);
    let theta0 = theta0.map(|x| x / n0);
    let miss = || FoliationError::NoIntersection { lambda, theta0 };
    if theta0[2] < -1e-15 {
        return Err(miss());
    }
    let mut omega = theta0;
    let mut prev_step = f64::INFINITY;
    let mut growth = 0;
    for it in 1..=RAY_MAX_ITER {
        let f = fam.f_at(lambda, omega)?;
        let l2 = lambda * lambda;
        let c = [lambda * fam.v + l2 * f[0], l2 * f[1], l2 * f[2]];
        let b = dot(c, theta0);
        let disc = b * b - dot(c, c) + l2;
        if disc < 0.0 {
            return Err(miss());
        }
        let t = b + disc.sqrt();
        if t < 0.0 {
            return Err(miss());
        }
        let mut next = sub(theta0.map(|x| t * x), c).map(|x| x / lambda);
        if next[2] < -1e-9 {
            return Err(miss());
        }
        next[2] = next[2].max(0.0);
        let nn = norm(next);
        next = next.map(|x| x / nn);
        let step = norm(sub(next, omega));
        omega = next;
        if step <= RAY_TOL {
            return Ok(RayIntersection { t, omega, iterations: it });
        }
        // the map must contract; a few non-shrinking steps in a row mean it does not
        if step >= prev_step {
            growth += 1;
            if growth > 5 {
                return Err(FoliationError::NoConvergence { lambda, step });
            }
        } else {
            growth = 0;
        }
        prev_step = step;
    }
    Err(FoliationError::NoConvergence { lambda, step: prev_step })
}

/// Leaf λ triangulated together with its mirror image under z ↦ −z, giving a
/// closed surface for inside/outside parity queries.
pub struct DoubledLeaf {
    triangles: Vec<[[f64; 3]; 3]>,
}

impl DoubledLeaf {
    pub fn new(fam: &LeafFamily, lambda: f64) -> Result<DoubledLeaf, EvalError> {
        let mut grid = vec![[0.0; 3]; (MESH_THETA + 1) * MESH_PHI];
        for i in 0..=MESH_THETA {
            let theta = FRAC_PI_2 * i as f64 / MESH_THETA as f64;
            for k in 0..MESH_PHI {
                let phi = 2.0 * PI * k as f64 / MESH_PHI as f64;
                grid[i * MESH_PHI + k] = fam.leaf_point_polar(lambda, theta, phi)?;
            }
        }
        let at = |i: usize, k: usize| grid[i * MESH_PHI + k % MESH_PHI];
        let mut triangles = Vec::with_capacity(4 * MESH_THETA * MESH_PHI);
        for i in 0..MESH_THETA {
            for k in 0..MESH_PHI {
                let (a, b, c, d) = (at(i, k), at(i + 1, k), at(i + 1, k + 1), at(i, k + 1));
                triangles.push([a, b, c]);
                triangles.push([a, c, d]);
            }
        }
        let mirrored: Vec<_> = triangles.iter().map(|t| t.map(|p| [p[0], p[1], -p[2]])).collect();
        triangles.extend(mirrored);
        Ok(DoubledLeaf { triangles })
    }

    /// Ray-crossing parity along a fixed generic direction.
    pub fn contains(&self, p: [f64; 3]) -> bool {
        const DIR: [f64; 3] = [0.213_452_7, 0.318_264_1, 0.923_651_9];
        let hits = self.triangles.iter().filter(|t| ray_hits_triangle(p, DIR, t)).count();
        hits % 2 == 1
    }
}

/// Möller–Trumbore, counting only hits with positive ray parameter.
fn ray_hits_triangle(origin: [f64; 3], dir: [f64; 3], tri: &[[f64; 3]; 3]) -> bool {
    let e1 = sub(tri[1], tri[0]);
    let e2 = sub(tri[2], tri[0]);
    let p = cross(dir, e2);
    let det = dot(e1, p);
    if det.abs() < 1e-300 {
        return false;
    }
    let inv = 1.0 / det;
    let s = sub(origin, tri[0]);
    let u = dot(s, p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return false;
    }
    let q = cross(s, e1);
    let w = dot(dir, q) * inv;
    if w < 0.0 || u + w > 1.0 {
        return false;
    }
    dot(e2, q) * inv > 0.0
}

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Witness {
    /// Two leaf points closer than the contact tolerance.
    NearContact { lambda1: f64, lambda2: f64, omega1: [f64; 3], omega2: [f64; 3], distance: f64 },
    /// φ_{λ₂}(−e₁) is inside leaf λ₁, φ_{λ₂}(e₁) is outside; leaf λ₂ crosses leaf λ₁
    /// along ω(s) = (−cos s, 0, sin s) at parameter s.
    Crossing { lambda1: f64, lambda2: f64, s: f64, point: [f64; 3] },
}

impl Witness {
    pub fn lambdas(&self) -> (f64, f64) {
        match *self {
            Witness::NearContact { lambda1, lambda2, .. } | Witness::Crossing { lambda1, lambda2, .. } => {
                (lambda1, lambda2)
            }
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LeafIntersection {
    pub intersect: bool,
    pub min_distance: f64,
    pub witness: Option<Witness>,
}

struct Closest {
    x: [f64; 4],
    d2: f64,
}

fn pair_d2(fam: &LeafFamily, l1: f64, l2: f64, x: [f64; 4]) -> Result<f64, EvalError> {
    let p = fam.leaf_point_polar(l1, x[0], x[1])?;
    let q = fam.leaf_point_polar(l2, x[2], x[3])?;
    let d = sub(p, q);
    Ok(dot(d, d))
}

fn pair_d2_grad(fam: &LeafFamily, l1: f64, l2: f64, x: [f64; 4]) -> Result<[f64; 4], EvalError> {
    let mut g = [0.0; 4];
    for (k, gk) in g.iter_mut().enumerate() {
        let mut y = x.map(Dual::constant);
        y[k].eps = 1.0;
        let p = fam.leaf_point(Dual::constant(l1), sphere_point(y[0], y[1]))?;
        let q = fam.leaf_point(Dual::constant(l2), sphere_point(y[2], y[3]))?;
        *gk = (0..3).map(|i| 2.0 * (p[i].re - q[i].re) * (p[i].eps - q[i].eps)).sum();
    }
    Ok(g)
}

fn project(mut x: [f64; 4]) -> [f64; 4] {
    x[0] = x[0].clamp(0.0, FRAC_PI_2);
    x[2] = x[2].clamp(0.0, FRAC_PI_2);
    x
}

/// Coarse 32×32 seeding on each leaf, then projected gradient descent on the
/// squared distance with Armijo backtracking.
fn closest_points(fam: &LeafFamily, l1: f64, l2: f64) -> Result<Closest, EvalError> {
    let n = SEED_GRID;
    let angles: Vec<(f64, f64)> = (0..n)
        .flat_map(|i| (0..n).map(move |k| (FRAC_PI_2 * i as f64 / (n - 1) as f64, 2.0 * PI * k as f64 / n as f64)))
        .collect();
    let pts = |l: f64| -> Result<Vec<[f64; 3]>, EvalError> {
        angles.iter().map(|&(t, p)| fam.leaf_point_polar(l, t, p)).collect()
    };
    let (p1, p2) = (pts(l1)?, pts(l2)?);
    let mut best = (f64::INFINITY, 0, 0);
    for (i, a) in p1.iter().enumerate() {
        for (j, b) in p2.iter().enumerate() {
            let d = sub(*a, *b);
            let d2 = dot(d, d);
            if d2 < best.0 {
                best = (d2, i, j);
            }
        }
    }
    let mut x = [angles[best.1].0, angles[best.1].1, angles[best.2].0, angles[best.2].1];
    let mut d2 = pair_d2(fam, l1, l2, x)?;
    let mut step = 1.0 / (l1 * l1 + l2 * l2);
    for _ in 0..DESCENT_STEPS {
        let g = pair_d2_grad(fam, l1, l2, x)?;
        let gg: f64 = g.iter().map(|v| v * v).sum();
        if gg == 0.0 || d2 == 0.0 {
            break;
        }
        let mut accepted = false;
        for _ in 0..60 {
            let y = project([x[0] - step * g[0], x[1] - step * g[1], x[2] - step * g[2], x[3] - step * g[3]]);
            let dy = pair_d2(fam, l1, l2, y)?;
            let moved: f64 = (0..4).map(|k| (y[k] - x[k]) * g[k]).sum();
            if dy <= d2 - 1e-4 * moved.max(0.0) && dy < d2 {
                x = y;
                d2 = dy;
                accepted = true;
                step *= 2.0;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok(Closest { x, d2 })
}

/// Whether leaves λ₁ < λ₂ meet: near contact of the closest points, or the
/// interior test (φ_{λ₂}(−e₁) inside the doubled leaf λ₁, φ_{λ₂}(e₁) outside).
pub fn leaves_intersect(fam: &LeafFamily, lambda1: f64, lambda2: f64) -> Result<LeafIntersection, FoliationError> {
    let closest = closest_points(fam, lambda1, lambda2)?;
    let distance = closest.d2.sqrt();
    if distance < CONTACT_TOL {
        let x = closest.x;
        return Ok(LeafIntersection {
            intersect: true,
            min_distance: distance,
            witness: Some(Witness::NearContact {
                lambda1,
                lambda2,
                omega1: sphere_point(x[0], x[1]),
                omega2: sphere_point(x[2], x[3]),
                distance,
            }),
        });
    }

    let inner = DoubledLeaf::new(fam, lambda1)?;
    let curve = |s: f64| [-s.cos(), 0.0, s.sin()];
    let inside_at = |s: f64| -> Result<bool, EvalError> { Ok(inner.contains(fam.leaf_point(lambda2, curve(s))?)) };
    if inside_at(0.0)? && !inside_at(PI)? {
        let (mut lo, mut hi) = (0.0, PI);
        for _ in 0..48 {
            let mid = 0.5 * (lo + hi);
            if inside_at(mid)? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let s = 0.5 * (lo + hi);
        return Ok(LeafIntersection {
            intersect: true,
            min_distance: distance,
            witness: Some(Witness::Crossing { lambda1, lambda2, s, point: fam.leaf_point(lambda2, curve(s))? }),
        });
    }
    if distance <= INCONCLUSIVE_TOL {
        return Err(FoliationError::Inconclusive { lambda1, lambda2, distance });
    }
    Ok(LeafIntersection { intersect: false, min_distance: distance, witness: None })
}

/// Exact hemisphere test for f ≡ 0: centres λv e₁ on the plane, radii λ.
pub fn spheres_intersect(v: f64, lambda1: f64, lambda2: f64) -> bool {
    let d = v * (lambda2 - lambda1).abs();
    d >= (lambda2 - lambda1).abs() && d <= lambda1 + lambda2
}

/// Exact ray parameter for f ≡ 0 (outer root).
pub fn sphere_ray_t(v: f64, lambda: f64, theta0: [f64; 3]) -> Option<f64> {
    let n = norm(theta0);
    let b = lambda * v * theta0[0] / n;
    let disc = b * b - lambda * lambda * (v * v - 1.0);
    (disc >= 0.0 && b + disc.sqrt() >= 0.0).then(|| b + disc.sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    Consecutive,
    Skip,
    /// (λ₁, λ₁ + λ₁/(v−1)), only for v > 1.
    Construction,
}

#[derive(Clone, Debug, Serialize)]
pub struct PairResult {
    pub kind: PairKind,
    pub lambda1: f64,
    pub lambda2: f64,
    pub intersect: bool,
    pub min_distance: f64,
    pub witness: Option<Witness>,
}

#[derive(Clone, Debug, Serialize)]
pub struct MonotoneCheck {
    pub rays: usize,
    pub misses: usize,
    pub violations: usize,
    /// (θ₀, λ) of the first miss or non-increase.
    pub first_failure: Option<([f64; 3], f64)>,
}

impl MonotoneCheck {
    pub fn passed(&self) -> bool {
        self.misses == 0 && self.violations == 0
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CoveragePoint {
    pub point: [f64; 3],
    pub lambda: Option<f64>,
    pub residual: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FoliationOutcome {
    Foliates,
    Overlaps,
}

#[derive(Clone, Debug, Serialize)]
pub struct FoliationReport {
    pub v: f64,
    pub lambda_max: f64,
    pub pairs: Vec<PairResult>,
    pub monotone: MonotoneCheck,
    pub coverage: Vec<CoveragePoint>,
    pub verdict: FoliationOutcome,
    pub witness: Option<Witness>,
    pub smoothness_certified: bool,
    pub note: &'static str,
}

pub const REPORT_NOTE: &str =
    "disjointness, monotonicity and coverage are checked on samples; smoothness of the leaf map is not certified";

/// λ_max·k/n for k = 1..=n.
pub fn lambda_grid(lambda_max: f64, n: usize) -> Vec<f64> {
    // k/n first, so the last entry is exactly λ_max
    (1..=n).map(|k| lambda_max * (k as f64 / n as f64)).collect()
}

/// Ray directions: `n_theta` polar angles in [0, π/2] by `n_phi` azimuths.
pub fn direction_grid(n_theta: usize, n_phi: usize) -> Vec<[f64; 3]> {
    let mut out = Vec::with_capacity(n_theta * n_phi);
    for i in 0..n_theta {
        let theta = FRAC_PI_2 * i as f64 / (n_theta - 1).max(1) as f64;
        for k in 0..n_phi {
            out.push(sphere_point(theta, 2.0 * PI * k as f64 / n_phi as f64));
        }
    }
    out
}

/// Points strictly inside the region swept up to λ_max: fractions of the
/// outer radius along a few rays. Rays that miss the outer leaf are skipped.
pub fn sample_points(fam: &LeafFamily) -> Vec<[f64; 3]> {
    let mut out = Vec::new();
    for dir in direction_grid(4, 6) {
        if let Ok(r) = ray_intersect(fam, fam.lambda_max, dir) {
            for frac in [0.2, 0.5, 0.85] {
                out.push(dir.map(|x| x * frac * r.t));
            }
        }
    }
    out
}

/// Leaf λ whose ray intersection along p/|p| equals |p|, by bisection on the monotone t.
pub fn locate(fam: &LeafFamily, p: [f64; 3]) -> Result<Option<f64>, FoliationError> {
    let r = norm(p);
    if r == 0.0 || p[2] < 0.0 {
        return Ok(None);
    }
    let t_of = |l: f64| ray_intersect(fam, l, p).map(|x| x.t);
    let Ok(t_max) = t_of(fam.lambda_max) else { return Ok(None) };
    if t_max < r {
        return Ok(None);
    }
    let (mut lo, mut hi) = (0.0, fam.lambda_max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        match t_of(mid) {
            Ok(t) if t < r => lo = mid,
            Ok(_) => hi = mid,
            // the ray missed an inner leaf: it cannot be covered monotonically
            Err(FoliationError::NoIntersection { .. }) => return Ok(None),
            Err(e) => return Err(e),
        }
    }
    Ok(Some(0.5 * (lo + hi)))
}

/// Runs the three checks; for v > 1 the construction pair λ₁ = λ_max(v−1)/v,
/// λ₂ = λ₁ + λ₁/(v−1) = λ_max is tested as well and preferred as witness.
pub fn foliation_report(
    fam: &LeafFamily,
    lambdas: &[f64],
    samples: &[[f64; 3]],
) -> Result<FoliationReport, FoliationError> {
    let mut grid: Vec<f64> = lambdas.to_vec();
    grid.sort_by(|a, b| a.total_cmp(b));
    grid.dedup();
    if let Some(&bad) = grid.iter().find(|&&l| !(l > 0.0 && l <= fam.lambda_max)) {
        return Err(FoliationError::InvalidFamily(format!("lambda {bad} outside (0, lambda_max]")));
    }

    let mut jobs = Vec::new();
    for i in 0..grid.len() {
        if i + 1 < grid.len() {
            jobs.push((PairKind::Consecutive, grid[i], grid[i + 1]));
        }
        if i + 2 < grid.len() {
            jobs.push((PairKind::Skip, grid[i], grid[i + 2]));
        }
    }
    if fam.v > 1.0 {
        let l1 = fam.lambda_max * (fam.v - 1.0) / fam.v;
        jobs.push((PairKind::Construction, l1, l1 + l1 / (fam.v - 1.0)));
    }
    let pairs: Vec<PairResult> = jobs
        .par_iter()
        .map(|&(kind, l1, l2)| {
            leaves_intersect(fam, l1, l2).map(|r| PairResult {
                kind,
                lambda1: l1,
                lambda2: l2,
                intersect: r.intersect,
                min_distance: r.min_distance,
                witness: r.witness,
            })
        })
        .collect::<Result<_, _>>()?;

    let dirs = direction_grid(8, 16);
    let per_ray: Vec<(usize, usize, Option<([f64; 3], f64)>)> = dirs
        .par_iter()
        .map(|&d| {
            let mut prev = 0.0;
            for &l in &grid {
                match ray_intersect(fam, l, d) {
                    Ok(r) if r.t > prev => prev = r.t,
                    Ok(_) => return Ok((0, 1, Some((d, l)))),
                    Err(FoliationError::NoIntersection { .. }) => return Ok((1, 0, Some((d, l)))),
                    Err(e) => return Err(e),
                }
            }
            Ok((0, 0, None))
        })
        .collect::<Result<_, FoliationError>>()?;
    let monotone = MonotoneCheck {
        rays: dirs.len(),
        misses: per_ray.iter().map(|r| r.0).sum(),
        violations: per_ray.iter().map(|r| r.1).sum(),
        first_failure: per_ray.iter().find_map(|r| r.2),
    };

    let coverage: Vec<CoveragePoint> = samples
        .par_iter()
        .map(|&p| {
            let lambda = locate(fam, p)?;
            let residual = match lambda {
                Some(l) => {
                    let r = ray_intersect(fam, l, p)?;
                    Some((r.t - norm(p)).abs())
                }
                None => None,
            };
            Ok(CoveragePoint { point: p, lambda, residual })
        })
        .collect::<Result<_, FoliationError>>()?;
    let covered = coverage.iter().all(|c| c.residual.is_some_and(|r| r < 1e-10));

    let disjoint = pairs.iter().all(|p| !p.intersect);
    let verdict = if disjoint && monotone.passed() && covered {
        FoliationOutcome::Foliates
    } else {
        FoliationOutcome::Overlaps
    };
    let witness = pairs
        .iter()
        .filter(|p| p.intersect)
        .max_by_key(|p| p.kind == PairKind::Construction)
        .and_then(|p| p.witness.clone());
    Ok(FoliationReport {
        v: fam.v,
        lambda_max: fam.lambda_max,
        pairs,
        monotone,
        coverage,
        verdict,
        witness,
        smoothness_certified: false,
        note: REPORT_NOTE,
    })
}

/// `v = …`, `f1|f2|f3 = <expr in lambda, w1, w2, w3>`, `lambda_max = …`;
/// missing components of f default to 0, `#` starts a comment line.
pub fn parse_family_file(text: &str) -> Result<LeafFamily, FamilyFileError> {
    let mut v = None;
    let mut lambda_max = None;
    let mut f = [Expr::zero(), Expr::zero(), Expr::zero()];
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let lineno = i + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, val) = line
            .split_once('=')
            .ok_or_else(|| FamilyFileError::Syntax { line: lineno, message: "expected `key = value`".into() })?;
        let number = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| FamilyFileError::Syntax { line: lineno, message: format!("bad number `{}`", s.trim()) })
        };
        let expr = |s: &str| parse(s).map_err(|source| FamilyFileError::Expr { line: lineno, source });
        match k.trim() {
            "v" => v = Some(number(val)?),
            "lambda_max" => lambda_max = Some(number(val)?),
            "f1" => f[0] = expr(val)?,
            "f2" => f[1] = expr(val)?,
            "f3" => f[2] = expr(val)?,
            other => {
                return Err(FamilyFileError::Syntax { line: lineno, message: format!("unknown key `{other}`") })
            }
        }
    }
    let v = v.ok_or(FamilyFileError::Missing("v"))?;
    let lambda_max = lambda_max.ok_or(FamilyFileError::Missing("lambda_max"))?;
    Ok(LeafFamily::new(v, f, lambda_max)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concentric_rays() {
        let fam = LeafFamily::spheres(0.0, 1.0).unwrap();
        let r = ray_intersect(&fam, 0.3, [0.6, 0.0, 0.8]).unwrap();
        assert!((r.t - 0.3).abs() < 1e-15);
        assert!(norm(sub(r.omega, [0.6, 0.0, 0.8])) < 1e-15);
    }

    #[test]
    fn parity_of_a_hemisphere() {
        let fam = LeafFamily::spheres(0.5, 1.0).unwrap();
        let leaf = DoubledLeaf::new(&fam, 0.1).unwrap();
        assert!(leaf.contains([0.05, 0.0, 0.0]));
        assert!(leaf.contains([0.05, 0.01, 0.05]));
        assert!(!leaf.contains([0.16, 0.0, 0.0]));
        assert!(!leaf.contains([-0.06, 0.0, 0.01]));
    }

    #[test]
    fn rejects_boundary_violation() {
        let f = [Expr::zero(), Expr::zero(), parse("w1").unwrap()];
        assert!(matches!(LeafFamily::new(0.5, f, 0.05), Err(FoliationError::InvalidFamily(_))));
    }

    #[test]
    fn family_file() {
        let fam = parse_family_file("# test\nv = 0.5\nf1 = 0.3\nlambda_max = 0.05\n").unwrap();
        assert_eq!(fam.v, 0.5);
        assert!(fam.f[1].is_zero());
        assert!(matches!(parse_family_file("v = 1"), Err(FamilyFileError::Missing("lambda_max"))));
    }
}
