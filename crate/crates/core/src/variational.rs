//! Functionals of perturbed half-spheres f_u(ω) = (1 + a·u(ω))ω in a perturbed
//! ambient metric g̃ = δ + m·q(x), evaluated with Taylor jets in the shared
//! parameter so that first and second variations come out of one pass.
//!
//! Geometry is computed per node in the (θ, φ) chart and integrated on the
//! (t = cos θ, φ) quadrature grid.

use crate::expr::{Dual, EvalError, Expr, Jet2, Program, Scalar};
use crate::linearized::{closed_form_uprime, LinearizedProblem};
use crate::quadrature::{
    gauss_legendre, integrate_equator, omega, recover_coefficients, CoefficientVector, QuadratureGrid, RecoveryError,
};
use crate::{expr::rational, Case};
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeSet;
use std::f64::consts::{FRAC_PI_2, LN_2, PI};

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum VarError {
    #[error("degenerate metric at (theta={theta:.6}, phi={phi:.6})")]
    DegenerateMetric { theta: f64, phi: f64 },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{term}: {source}")]
    NoRationalFit {
        term: String,
        #[source]
        source: RecoveryError,
    },
    #[error("{term}: probe pairs disagree by {discrepancy:e}")]
    InconsistentProbes { term: String, discrepancy: f64 },
}

type V3<S> = [S; 3];
type M3<S> = [[S; 3]; 3];
type M2<S> = [[S; 2]; 2];

fn zero<S: Scalar>() -> S {
    S::from_f64(0.0)
}

fn dot<S: Scalar>(a: &V3<S>, b: &V3<S>) -> S {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// g(a, b) = Σ g_ij aⁱ bʲ.
fn gdot<S: Scalar>(g: &M3<S>, a: &V3<S>, b: &V3<S>) -> S {
    let mut s = zero();
    for i in 0..3 {
        for j in 0..3 {
            s = s + g[i][j] * a[i] * b[j];
        }
    }
    s
}

fn inv3<S: Scalar>(m: &M3<S>) -> Option<M3<S>> {
    let c = |i: usize, j: usize| {
        let (i1, i2) = ((i + 1) % 3, (i + 2) % 3);
        let (j1, j2) = ((j + 1) % 3, (j + 2) % 3);
        m[i1][j1] * m[i2][j2] - m[i1][j2] * m[i2][j1]
    };
    let det = m[0][0] * c(0, 0) + m[0][1] * c(0, 1) + m[0][2] * c(0, 2);
    if det.value() <= 0.0 || !det.value().is_finite() {
        return None;
    }
    let mut r = [[zero(); 3]; 3];
    for (i, row) in r.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = c(j, i) / det;
        }
    }
    Some(r)
}

fn det3<S: Scalar>(m: &M3<S>) -> S {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn axpy<S: Scalar>(a: S, x: &V3<S>, y: &V3<S>) -> V3<S> {
    [a * x[0] + y[0], a * x[1] + y[1], a * x[2] + y[2]]
}

fn scale<S: Scalar>(a: S, x: &V3<S>) -> V3<S> {
    [a * x[0], a * x[1], a * x[2]]
}

fn add<S: Scalar>(x: &V3<S>, y: &V3<S>) -> V3<S> {
    [x[0] + y[0], x[1] + y[1], x[2] + y[2]]
}

// ---------------------------------------------------------------------------
// Metric perturbations

/// Names of the free boundary-curvature derivative symbols ∂ᵢh_ab (a, b ∈ {1,2}).
pub const DH_SYMBOLS: [&str; 6] = ["h111", "h112", "h122", "h211", "h212", "h222"];

/// Symmetric 3×3 perturbation q(x) of the Euclidean metric.
#[derive(Clone, Debug)]
pub struct MetricPerturbation {
    pub q: [[Expr; 3]; 3],
}

fn x(i: usize) -> Expr {
    Expr::var(["x1", "x2", "x3"][i])
}

impl MetricPerturbation {
    pub fn zero() -> Self {
        MetricPerturbation { q: std::array::from_fn(|_| std::array::from_fn(|_| Expr::zero())) }
    }

    fn from_upper(entries: [[Option<Expr>; 3]; 3]) -> Self {
        let mut m = Self::zero();
        for i in 0..3 {
            for j in i..3 {
                if let Some(e) = &entries[i][j] {
                    m.q[i][j] = e.clone();
                    m.q[j][i] = e.clone();
                }
            }
        }
        m
    }

    /// First λ-derivative of the blown-up metric: q₁₃ = κ₁x₁, q₂₃ = κ₂x₂.
    pub fn first_order(k1: f64, k2: f64) -> Self {
        let (k1, k2) = (Expr::from_f64(k1), Expr::from_f64(k2));
        Self::from_upper([
            [None, None, Some(&k1 * x(0))],
            [None, None, Some(&k2 * x(1))],
            [None, None, None],
        ])
    }

    /// Second λ-derivative. The third column carries ∂ᵢh_ab x_a x_b with the
    /// symbols of [`DH_SYMBOLS`] left free.
    pub fn second_order(k1: f64, k2: f64) -> Self {
        let (k1, k2) = (Expr::from_f64(k1), Expr::from_f64(k2));
        let two = Expr::int(2);
        let dh = |i: usize| {
            let s = |n: &str| Expr::var(n);
            let base = i * 3;
            s(DH_SYMBOLS[base]) * x(0).pow(2)
                + &two * s(DH_SYMBOLS[base + 1]) * x(0) * x(1)
                + s(DH_SYMBOLS[base + 2]) * x(1).pow(2)
        };
        Self::from_upper([
            [Some(&two * k1.pow(2) * x(0).pow(2)), Some(&two * &k1 * &k2 * x(0) * x(1)), Some(dh(0))],
            [None, Some(&two * k2.pow(2) * x(1).pow(2)), Some(dh(1))],
            [None, None, Some(Expr::zero())],
        ])
    }

    /// Substitute all free symbols other than x1, x2, x3 by the same value.
    pub fn with_symbols(&self, value: f64) -> Self {
        let map = DH_SYMBOLS.iter().map(|s| (s.to_string(), Expr::from_f64(value))).collect();
        MetricPerturbation { q: self.q.clone().map(|row| row.map(|e| e.substitute_all(&map))) }
    }

    pub fn trace(&self) -> Expr {
        &self.q[0][0] + &self.q[1][1] + &self.q[2][2]
    }

    pub fn is_zero(&self) -> bool {
        self.q.iter().flatten().all(Expr::is_zero)
    }

    pub fn free_symbols(&self) -> BTreeSet<String> {
        let mut s = BTreeSet::new();
        for e in self.q.iter().flatten() {
            s.extend(e.free_vars());
        }
        for v in ["x1", "x2", "x3"] {
            s.remove(v);
        }
        s
    }

    /// q(ω, ω) with x = ω.
    pub fn on_omega(&self) -> Expr {
        let w = |i: usize| Expr::var(["w1", "w2", "w3"][i]);
        let mut s = Expr::zero();
        for i in 0..3 {
            for j in 0..3 {
                s = s + &self.q[i][j] * w(i) * w(j);
            }
        }
        restrict_to_sphere(&s)
    }
}

/// Replace x1, x2, x3 by w1, w2, w3.
pub fn restrict_to_sphere(e: &Expr) -> Expr {
    let map = [("x1", "w1"), ("x2", "w2"), ("x3", "w3")]
        .into_iter()
        .map(|(a, b)| (a.to_string(), Expr::var(b)))
        .collect();
    e.substitute_all(&map)
}

// ---------------------------------------------------------------------------
// Compiled deformation

const UPPER: [(usize, usize); 6] = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];

/// The graph function u (in w1, w2, w3) and metric perturbation q (in x1, x2, x3),
/// compiled with the derivatives the geometry needs.
#[derive(Clone, Debug)]
pub struct Immersion {
    /// u, ∇u (3), ∇²u (upper 6)
    u: Option<Program>,
    /// q (upper 6), then ∂ₖq for k = 1..3 (18)
    q: Option<Program>,
    /// q (upper 6) only, for the volume shells
    q_values: Option<Program>,
}

impl Immersion {
    pub fn new(u: &Expr, metric: &MetricPerturbation) -> Result<Self, VarError> {
        let wv = ["w1", "w2", "w3"];
        let xv = ["x1", "x2", "x3"];
        let u_prog = if u.is_zero() {
            None
        } else {
            let grad: Vec<Expr> = wv.iter().map(|v| u.diff(v)).collect();
            let mut outs = vec![u.clone()];
            outs.extend(grad.iter().cloned());
            for (i, j) in UPPER {
                outs.push(grad[i].diff(wv[j]));
            }
            Some(Program::compile(&outs, &wv)?)
        };
        let (q_prog, qv_prog) = if metric.is_zero() {
            (None, None)
        } else {
            let vals: Vec<Expr> = UPPER.iter().map(|&(i, j)| metric.q[i][j].clone()).collect();
            let mut outs = vals.clone();
            for v in xv {
                outs.extend(vals.iter().map(|e| e.diff(v)));
            }
            (Some(Program::compile(&outs, &xv)?), Some(Program::compile(&vals, &xv)?))
        };
        Ok(Immersion { u: u_prog, q: q_prog, q_values: qv_prog })
    }

    fn u_data<S: Scalar>(&self, w: &V3<S>) -> Result<(S, V3<S>, M3<S>), EvalError> {
        let Some(p) = &self.u else {
            return Ok((zero(), [zero(); 3], [[zero(); 3]; 3]));
        };
        let v = p.eval_all(w)?;
        let mut h = [[zero(); 3]; 3];
        for (k, &(i, j)) in UPPER.iter().enumerate() {
            h[i][j] = v[4 + k];
            h[j][i] = v[4 + k];
        }
        Ok((v[0], [v[1], v[2], v[3]], h))
    }

    /// Ambient metric and its first derivatives at x, scaled by the amplitude m.
    fn metric_at<S: Scalar>(&self, x: &V3<S>, m: S) -> Result<(M3<S>, [M3<S>; 3]), EvalError> {
        let mut g = [[zero(); 3]; 3];
        for (i, row) in g.iter_mut().enumerate() {
            row[i] = S::from_f64(1.0);
        }
        let mut dg = [[[zero(); 3]; 3]; 3];
        if let Some(p) = &self.q {
            let v = p.eval_all(x)?;
            for (k, &(i, j)) in UPPER.iter().enumerate() {
                g[i][j] = g[i][j] + m * v[k];
                if i != j {
                    g[j][i] = g[i][j];
                }
                for (c, dgc) in dg.iter_mut().enumerate() {
                    let d = m * v[6 + 6 * c + k];
                    dgc[i][j] = d;
                    dgc[j][i] = d;
                }
            }
        }
        Ok((g, dg))
    }

    fn det_metric_at<S: Scalar>(&self, x: &V3<S>, m: S) -> Result<S, EvalError> {
        let mut g = [[zero(); 3]; 3];
        for (i, row) in g.iter_mut().enumerate() {
            row[i] = S::from_f64(1.0);
        }
        if let Some(p) = &self.q_values {
            let v = p.eval_all(x)?;
            for (k, &(i, j)) in UPPER.iter().enumerate() {
                g[i][j] = g[i][j] + m * v[k];
                g[j][i] = g[i][j];
            }
        }
        Ok(det3(&g))
    }
}

/// Deformation amplitudes: the surface is (1 + a·u)ω in the metric δ + m·q.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Amplitudes<S> {
    pub a: S,
    pub m: S,
}

impl Amplitudes<Jet2> {
    /// (εu, δ + εq) with jet parameter ε, selecting which slots move.
    pub fn along(u: bool, metric: bool) -> Self {
        let e = |on: bool| if on { Jet2::param() } else { Jet2::constant(0.0) };
        Amplitudes { a: e(u), m: e(metric) }
    }

    pub fn fixed(a: f64, m: f64) -> Self {
        Amplitudes { a: Jet2::constant(a), m: Jet2::constant(m) }
    }
}

/// Embedded geometry at one chart point.
#[derive(Clone, Debug)]
pub struct NodeGeometry<S> {
    pub omega: V3<S>,
    /// 1 + a·u
    pub radius: S,
    pub x: V3<S>,
    /// X_θ, X_φ
    pub xi: [V3<S>; 2],
    pub xij: [[V3<S>; 2]; 2],
    /// Ambient metric at X and its partial derivatives ∂_c g̃_ab as dg[c][a][b].
    pub gt: M3<S>,
    pub dgt: [M3<S>; 3],
    pub gt_inv: M3<S>,
    /// Induced metric in (θ, φ) and its inverse.
    pub g: M2<S>,
    pub g_inv: M2<S>,
    /// ω minus its g̃-tangential part (unnormalized, before the sign flip).
    pub n: V3<S>,
    /// Interior g̃-unit normal.
    pub normal: V3<S>,
    /// Second fundamental form h_ij = g̃(∇_{X_i}X_j, ν).
    pub h: M2<S>,
    pub mean_curvature: S,
    /// √det g (density w.r.t. dθ dφ).
    pub area_density: S,
}

impl<S: Scalar> NodeGeometry<S> {
    /// Γ(V, W)ᶜ of the ambient Levi-Civita connection.
    pub fn christoffel(&self, v: &V3<S>, w: &V3<S>) -> V3<S> {
        // lowered Γ_{d,ab} vᵃ wᵇ = ½(∂_a g_bd + ∂_b g_ad − ∂_d g_ab) vᵃ wᵇ
        let mut low = [zero(); 3];
        for (d, l) in low.iter_mut().enumerate() {
            let mut s: S = zero();
            for a in 0..3 {
                for b in 0..3 {
                    let c = self.dgt[a][b][d] + self.dgt[b][a][d] - self.dgt[d][a][b];
                    s = s + c * v[a] * w[b];
                }
            }
            *l = s.scale(0.5);
        }
        let mut out = [zero(); 3];
        for (c, o) in out.iter_mut().enumerate() {
            for (d, l) in low.iter().enumerate() {
                *o = *o + self.gt_inv[c][d] * *l;
            }
        }
        out
    }
}

fn omega_chart<S: Scalar>(theta: S, phi: S) -> (V3<S>, [V3<S>; 2], [[V3<S>; 2]; 2]) {
    let (st, ct, sp, cp) = (theta.sin(), theta.cos(), phi.sin(), phi.cos());
    let z = zero();
    let w = [st * cp, st * sp, ct];
    let wt = [ct * cp, ct * sp, -st];
    let wp = [-(st * sp), st * cp, z];
    let wtt = [-w[0], -w[1], -w[2]];
    let wtp = [-(ct * sp), ct * cp, z];
    let wpp = [-(st * cp), -(st * sp), z];
    (w, [wt, wp], [[wtt, wtp], [wtp, wpp]])
}

/// Full embedded geometry at (θ, φ).
pub fn node_geometry<S: Scalar>(imm: &Immersion, theta: S, phi: S, amp: Amplitudes<S>) -> Result<NodeGeometry<S>, VarError> {
    let degenerate = || VarError::DegenerateMetric { theta: theta.value(), phi: phi.value() };
    let (w, wi, wij) = omega_chart(theta, phi);
    let (u, du, d2u) = imm.u_data(&w)?;
    // chart derivatives of u by the chain rule
    let ui: [S; 2] = std::array::from_fn(|i| dot(&du, &wi[i]));
    let uij: [[S; 2]; 2] = std::array::from_fn(|i| {
        std::array::from_fn(|j| {
            let mut s = dot(&du, &wij[i][j]);
            for a in 0..3 {
                for b in 0..3 {
                    s = s + d2u[a][b] * wi[i][a] * wi[j][b];
                }
            }
            s
        })
    });
    let a = amp.a;
    let r = S::from_f64(1.0) + a * u;
    let x = scale(r, &w);
    let xi: [V3<S>; 2] = std::array::from_fn(|i| axpy(a * ui[i], &w, &scale(r, &wi[i])));
    let xij: [[V3<S>; 2]; 2] = std::array::from_fn(|i| {
        std::array::from_fn(|j| {
            let mut v = axpy(a * uij[i][j], &w, &scale(r, &wij[i][j]));
            v = axpy(a * ui[i], &wi[j], &v);
            axpy(a * ui[j], &wi[i], &v)
        })
    });
    let (gt, dgt) = imm.metric_at(&x, amp.m)?;
    let gt_inv = inv3(&gt).ok_or_else(degenerate)?;
    let g: M2<S> = std::array::from_fn(|i| std::array::from_fn(|j| gdot(&gt, &xi[i], &xi[j])));
    let det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
    if det.value() <= 0.0 || !det.value().is_finite() {
        return Err(degenerate());
    }
    let g_inv = [[g[1][1] / det, -g[0][1] / det], [-g[1][0] / det, g[0][0] / det]];
    // ν = −(ω − g^{ij} g̃(ω, X_i) X_j) / √(g̃(ω,ω) − g^{ij} g̃(ω,X_i) g̃(ω,X_j))
    let c: [S; 2] = std::array::from_fn(|i| gdot(&gt, &w, &xi[i]));
    let mut n = w;
    let mut rad = gdot(&gt, &w, &w);
    for i in 0..2 {
        for j in 0..2 {
            n = axpy(-(g_inv[i][j] * c[i]), &xi[j], &n);
            rad = rad - g_inv[i][j] * c[i] * c[j];
        }
    }
    if rad.value() <= 0.0 || !rad.value().is_finite() {
        return Err(degenerate());
    }
    let normal = scale(-(S::from_f64(1.0) / rad.sqrt()), &n);
    let mut geo = NodeGeometry {
        omega: w,
        radius: r,
        x,
        xi,
        xij,
        gt,
        dgt,
        gt_inv,
        g,
        g_inv,
        n,
        normal,
        h: [[zero(); 2]; 2],
        mean_curvature: zero(),
        area_density: det.sqrt(),
    };
    let mut h = [[zero(); 2]; 2];
    let mut hm = zero();
    for i in 0..2 {
        for j in 0..2 {
            let cov = add(&geo.xij[i][j], &geo.christoffel(&geo.xi[i], &geo.xi[j]));
            h[i][j] = gdot(&geo.gt, &cov, &geo.normal);
        }
    }
    for i in 0..2 {
        for j in 0..2 {
            hm = hm + geo.g_inv[i][j] * h[i][j];
        }
    }
    geo.h = h;
    geo.mean_curvature = hm;
    Ok(geo)
}

/// Interior unit normal ν̃[u, g̃] at (θ, φ).
pub fn normal<S: Scalar>(imm: &Immersion, theta: S, phi: S, amp: Amplitudes<S>) -> Result<V3<S>, VarError> {
    Ok(node_geometry(imm, theta, phi, amp)?.normal)
}

/// Mean curvature from the Christoffel form of the second fundamental form.
pub fn mean_curvature<S: Scalar>(imm: &Immersion, theta: S, phi: S, amp: Amplitudes<S>) -> Result<S, VarError> {
    Ok(node_geometry(imm, theta, phi, amp)?.mean_curvature)
}

fn lift<S: Scalar>(amp: Amplitudes<S>) -> Amplitudes<Dual<S>> {
    Amplitudes { a: Dual::constant(amp.a), m: Dual::constant(amp.m) }
}

/// Chart derivatives ∂_θ ν̃ and ∂_φ ν̃ via a dual number on top of S.
pub fn normal_derivatives<S: Scalar>(imm: &Immersion, theta: S, phi: S, amp: Amplitudes<S>) -> Result<[V3<S>; 2], VarError> {
    let one = S::from_f64(1.0);
    let nt = normal(imm, Dual::new(theta, one), Dual::constant(phi), lift(amp))?;
    let np = normal(imm, Dual::constant(theta), Dual::new(phi, one), lift(amp))?;
    Ok([nt.map(|d| d.eps), np.map(|d| d.eps)])
}

/// Mean curvature from the normal-derivative form
/// h_ij = −½(ν^μ ∂_μ g̃(X_i, X_j) + g̃(X_i, ∂_j ν) + g̃(X_j, ∂_i ν)),
/// which needs no Christoffel symbols. Used to cross-check [`mean_curvature`].
pub fn mean_curvature_normal_form<S: Scalar>(imm: &Immersion, theta: S, phi: S, amp: Amplitudes<S>) -> Result<S, VarError> {
    let geo = node_geometry(imm, theta, phi, amp)?;
    let dn = normal_derivatives(imm, theta, phi, amp)?;
    let mut hm = zero();
    for i in 0..2 {
        for j in 0..2 {
            let mut dg_xx: S = zero();
            for (mu, nu_mu) in geo.normal.iter().enumerate() {
                dg_xx = dg_xx + *nu_mu * gdot(&geo.dgt[mu], &geo.xi[i], &geo.xi[j]);
            }
            let hij = -(dg_xx + gdot(&geo.gt, &geo.xi[i], &dn[j]) + gdot(&geo.gt, &geo.xi[j], &dn[i])).scale(0.5);
            hm = hm + geo.g_inv[i][j] * hij;
        }
    }
    Ok(hm)
}

// ---------------------------------------------------------------------------
// Functionals

/// Gauss nodes in the radial shell variable.
pub const RADIAL_NODES: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Functionals {
    pub area: Jet2,
    pub volume: Jet2,
    /// ¼∫H² dμ
    pub willmore: Jet2,
    /// Barycenter components C¹, C² of the enclosed region.
    pub barycenter: [Jet2; 2],
    /// ∫ B₁ dS over the equator.
    pub boundary_b1: Jet2,
}

fn jet_arr(j: Jet2) -> [f64; 3] {
    [j.value, j.d1, j.d2]
}

fn arr_jet(a: &[f64]) -> Jet2 {
    Jet2::new(a[0], a[1], a[2])
}

/// Geometry at a quadrature node (t, φ) with θ = arccos t.
fn at_node(imm: &Immersion, t: f64, phi: f64, amp: Amplitudes<Jet2>) -> Result<NodeGeometry<Jet2>, VarError> {
    node_geometry(imm, Jet2::constant(t.acos()), Jet2::constant(phi), amp)
}

/// Surface measure dμ_f relative to dt dφ.
fn measure(geo: &NodeGeometry<Jet2>, t: f64) -> Jet2 {
    geo.area_density.scale(1.0 / (1.0 - t * t).sqrt())
}

pub fn functionals(imm: &Immersion, amp: Amplitudes<Jet2>, grid: &QuadratureGrid) -> Result<Functionals, VarError> {
    let (sx, sw) = gauss_legendre(RADIAL_NODES);
    let shells: Vec<(f64, f64)> = sx.iter().zip(&sw).map(|(x, w)| (0.5 * (x + 1.0), 0.5 * w)).collect();
    let sums = grid.integrate_array::<15, VarError, _>(|t, phi| {
        let geo = at_node(imm, t, phi, amp)?;
        let dmu = measure(&geo, t);
        let hm = geo.mean_curvature;
        let w = ((hm * hm).scale(0.25)) * dmu;
        let r = geo.radius;
        let mut vol = Jet2::constant(0.0);
        let mut bc = [Jet2::constant(0.0); 2];
        for &(s, ws) in &shells {
            let p = scale(r.scale(s), &geo.omega);
            let det = imm.det_metric_at(&p, amp.m)?;
            if det.value <= 0.0 {
                return Err(VarError::DegenerateMetric { theta: t.acos(), phi });
            }
            let sd = det.sqrt();
            let base = sd * r.powi(3).scale(ws * s * s);
            vol = vol + base;
            bc[0] = bc[0] + base * r.scale(s) * geo.omega[0];
            bc[1] = bc[1] + base * r.scale(s) * geo.omega[1];
        }
        let mut out = [0.0; 15];
        for (k, j) in [dmu, vol, w, bc[0], bc[1]].into_iter().enumerate() {
            out[3 * k..3 * k + 3].copy_from_slice(&jet_arr(j));
        }
        Ok(out)
    })?;
    let volume = arr_jet(&sums[3..6]);
    Ok(Functionals {
        area: arr_jet(&sums[0..3]),
        volume,
        willmore: arr_jet(&sums[6..9]),
        barycenter: [arr_jet(&sums[9..12]) / volume, arr_jet(&sums[12..15]) / volume],
        boundary_b1: integrate_equator_jet(|phi| boundary_b1(imm, phi, amp))?,
    })
}

/// Trapezoid nodes on the equator.
pub const EQUATOR_NODES: usize = 256;

/// ∫ f dS over the equator for a jet-valued f.
pub fn integrate_equator_jet(f: impl Fn(f64) -> Result<Jet2, VarError>) -> Result<Jet2, VarError> {
    let mut parts = [0.0; 3];
    for (k, p) in parts.iter_mut().enumerate() {
        // the three components share nodes; recomputation is cheap on the equator
        *p = integrate_equator(EQUATOR_NODES, |phi| f(phi).map(|j| jet_arr(j)[k]))?;
    }
    Ok(arr_jet(&parts))
}

// ---------------------------------------------------------------------------
// Boundary operators

/// B₁[u, g̃] = e₃-component of ω − g^{ij} g̃(ω, X_i) X_j on the equator: the
/// orthogonal-contact condition before normalization.
pub fn boundary_b1<S: Scalar>(imm: &Immersion, phi: f64, amp: Amplitudes<S>) -> Result<S, VarError> {
    let geo = node_geometry(imm, S::from_f64(FRAC_PI_2), S::from_f64(phi), amp)?;
    Ok(geo.n[2])
}

/// B₂[u, g̃] = ∂H/∂η̃ + H·h̃^{ℝ²}(ν̃, ν̃) on the equator, with η̃ the interior
/// unit conormal and h̃^{ℝ²} the second fundamental form of {x₃ = 0} in g̃
/// with respect to its upward unit normal.
pub fn boundary_b2<S: Scalar>(imm: &Immersion, phi: f64, amp: Amplitudes<S>) -> Result<S, VarError> {
    let one = S::from_f64(1.0);
    let (th, ph) = (S::from_f64(FRAC_PI_2), S::from_f64(phi));
    let geo = node_geometry(imm, th, ph, amp)?;
    let h_t = mean_curvature(imm, Dual::new(th, one), Dual::constant(ph), lift(amp))?.eps;
    let h_p = mean_curvature(imm, Dual::constant(th), Dual::new(ph, one), lift(amp))?.eps;
    // η̃ = −(g^{θθ}X_θ + g^{θφ}X_φ)/√g^{θθ}
    let gtt = geo.g_inv[0][0];
    let dh_eta = -(gtt * h_t + geo.g_inv[0][1] * h_p) / gtt.sqrt();
    let nu = geo.normal;
    let gamma = geo.christoffel(&nu, &nu);
    let h_plane = gamma[2] / geo.gt_inv[2][2].sqrt();
    Ok(dh_eta + geo.mean_curvature * h_plane)
}

// ---------------------------------------------------------------------------
// Second-derivative terms

/// (κ₁, κ₂) probes; the first two determine the (K, H²) coefficients, the rest check them.
pub const PROBES: [(f64, f64); 4] = [(1.0, 0.0), (1.0, 1.0), (0.0, 1.0), (2.0, -1.0)];

/// Probe-pair consistency threshold.
pub const PROBE_TOL: f64 = 1e-7;

/// Residual accepted when recovering π(p + q ln 2).
pub const RECOVERY_TOL: f64 = 1e-12;

pub fn term_names(case: Case) -> [&'static str; 5] {
    match case {
        Case::Willmore => ["D1^2 W(u',u')", "D12^2 W(u',g')", "D2^2 W(g',g')", "D1 W u''", "D2 W g''"],
        Case::Cmc => ["D1^2 A(u',u')", "D12^2 A(u',g')", "D2^2 A(g',g')", "D1 A u''", "D2 A g''"],
    }
}

/// Raw term values at one (κ₁, κ₂).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeTerms {
    pub kappa: (f64, f64),
    pub terms: [f64; 5],
    /// First derivative of the energy (Willmore) or area (CMC) along (λu′, δ+λg̃′).
    pub first_derivative: f64,
    /// Alternative evaluations of the last term (closed integrand vs jet).
    pub last_term_check: f64,
    /// The last term with the free ∂h symbols set to 1 instead of 0.
    pub last_term_symbols_one: f64,
    /// ∫_{∂} D₂B₁ g̃″ dS (Willmore only, expected 0).
    pub odd_boundary: f64,
}

impl ProbeTerms {
    /// T₁ + 2T₂ + T₃ + T₄ + T₅.
    pub fn total(&self) -> f64 {
        let t = &self.terms;
        t[0] + 2.0 * t[1] + t[2] + t[3] + t[4]
    }
}

fn u_prime(case: Case, k1: f64, k2: f64) -> Expr {
    closed_form_uprime(&LinearizedProblem::new(case, k1, k2))
}

/// ½tr_{ℝ³}q + (5/2)q(ω,ω) − (div q)(ω) restricted to the sphere.
pub fn willmore_metric_integrand(q: &MetricPerturbation) -> Expr {
    let w = |i: usize| Expr::var(["w1", "w2", "w3"][i]);
    let xv = ["x1", "x2", "x3"];
    let mut div = Expr::zero();
    for b in 0..3 {
        let mut col = Expr::zero();
        for (a, v) in xv.iter().enumerate() {
            col = col + q.q[a][b].diff(v);
        }
        div = div + col * w(b);
    }
    let tr = restrict_to_sphere(&q.trace());
    Expr::ratio(1, 2) * tr + Expr::ratio(5, 2) * q.on_omega() - restrict_to_sphere(&div)
}

/// ½(tr q − q(ω,ω)) restricted to the sphere, i.e. ½ tr_{𝕊²} q.
pub fn area_metric_integrand(q: &MetricPerturbation) -> Expr {
    Expr::ratio(1, 2) * (restrict_to_sphere(&q.trace()) - q.on_omega())
}

fn pick(case: Case, f: &Functionals) -> Jet2 {
    match case {
        Case::Willmore => f.willmore,
        Case::Cmc => f.area,
    }
}

pub fn probe_terms(case: Case, k1: f64, k2: f64, grid: &QuadratureGrid) -> Result<ProbeTerms, VarError> {
    let u = u_prime(case, k1, k2);
    let g1 = MetricPerturbation::first_order(k1, k2);
    let g2 = MetricPerturbation::second_order(k1, k2);
    let g2_0 = g2.with_symbols(0.0);
    let g2_1 = g2.with_symbols(1.0);
    let imm = Immersion::new(&u, &g1)?;
    let imm_g2 = Immersion::new(&Expr::zero(), &g2_0)?;
    let imm_g2_1 = Immersion::new(&Expr::zero(), &g2_1)?;
    let f_u = functionals(&imm, Amplitudes::along(true, false), grid)?;
    let f_g = functionals(&imm, Amplitudes::along(false, true), grid)?;
    let f_d = functionals(&imm, Amplitudes::along(true, true), grid)?;
    let f_2 = functionals(&imm_g2, Amplitudes::along(false, true), grid)?;
    let f_21 = functionals(&imm_g2_1, Amplitudes::along(false, true), grid)?;
    let (t1, t3, td) = (pick(case, &f_u).d2, pick(case, &f_g).d2, pick(case, &f_d).d2);
    let t2 = 0.5 * (td - t1 - t3);
    let (t4, t5, check, sym1, odd) = match case {
        Case::Willmore => {
            let odd = integrate_equator_jet(|phi| boundary_b1(&imm_g2, phi, Amplitudes::along(false, true)))?.d1;
            let quad = integrate_equator_jet(|phi| boundary_b1(&imm, phi, Amplitudes::along(true, true)))?.d2;
            let closed = crate::quadrature::integrate_surface(&willmore_metric_integrand(&g2_0), grid)
                .map_err(quad_err)?;
            (odd + quad, f_2.willmore.d1, closed, f_21.willmore.d1, odd)
        }
        Case::Cmc => {
            let u2 = crate::quadrature::integrate_surface(&u.pow(2), grid).map_err(quad_err)?;
            let closed =
                crate::quadrature::integrate_surface(&area_metric_integrand(&g2_0), grid).map_err(quad_err)?;
            (-4.0 * u2, f_2.area.d1, closed, f_21.area.d1, 0.0)
        }
    };
    Ok(ProbeTerms {
        kappa: (k1, k2),
        terms: [t1, t2, t3, t4, t5],
        first_derivative: pick(case, &f_d).d1,
        last_term_check: check,
        last_term_symbols_one: sym1,
        odd_boundary: odd,
    })
}

fn quad_err(e: crate::quadrature::QuadError) -> VarError {
    match e {
        crate::quadrature::QuadError::Eval { t, phi, .. } => VarError::DegenerateMetric { theta: t.acos(), phi },
        other => VarError::Eval(EvalError::Unbound(other.to_string())),
    }
}

/// A term expressed as α·K + β·H² with α, β ∈ π(ℚ + ℚ ln 2).
#[derive(Clone, Debug, PartialEq)]
pub struct FunctionalValue {
    pub name: String,
    pub k: CoefficientVector,
    pub h2: CoefficientVector,
    pub k_numeric: f64,
    pub h2_numeric: f64,
    /// Largest mismatch at the check probes.
    pub probe_spread: f64,
}

/// Solve α K + β H² = value from two probes and check the rest.
pub fn decompose(name: &str, probes: &[(f64, f64)], values: &[f64]) -> Result<(f64, f64, f64), VarError> {
    let row = |(k1, k2): (f64, f64)| (k1 * k2, (k1 + k2) * (k1 + k2));
    let (a0, b0) = row(probes[0]);
    let (a1, b1) = row(probes[1]);
    let det = a0 * b1 - a1 * b0;
    let alpha = (values[0] * b1 - values[1] * b0) / det;
    let beta = (a0 * values[1] - a1 * values[0]) / det;
    let mut spread: f64 = 0.0;
    for (p, v) in probes.iter().zip(values).skip(2) {
        let (a, b) = row(*p);
        spread = spread.max((alpha * a + beta * b - v).abs());
    }
    if spread > PROBE_TOL {
        return Err(VarError::InconsistentProbes { term: name.to_string(), discrepancy: spread });
    }
    Ok((alpha, beta, spread))
}

fn recover(name: &str, x: f64, tol: f64) -> Result<CoefficientVector, VarError> {
    recover_coefficients(x, tol).map_err(|source| VarError::NoRationalFit { term: name.to_string(), source })
}

#[derive(Clone, Debug)]
pub struct TermTable {
    pub case: Case,
    pub terms: Vec<FunctionalValue>,
    pub total: FunctionalValue,
    pub probes: Vec<ProbeTerms>,
}

/// Evaluate all five second-derivative terms at every probe and decompose them
/// into K and H² coefficients.
pub fn second_derivative_terms(case: Case, grid: &QuadratureGrid) -> Result<TermTable, VarError> {
    second_derivative_terms_with(case, grid, RECOVERY_TOL)
}

pub fn second_derivative_terms_with(case: Case, grid: &QuadratureGrid, tol: f64) -> Result<TermTable, VarError> {
    let probes = evaluate_probes(case, grid)?;
    let names = term_names(case);
    let mut terms = Vec::new();
    for (i, name) in names.iter().enumerate() {
        let vals: Vec<f64> = probes.iter().map(|p| p.terms[i]).collect();
        terms.push(term_value(name, &vals, tol)?);
    }
    let totals: Vec<f64> = probes.iter().map(ProbeTerms::total).collect();
    let total = term_value("total", &totals, tol)?;
    Ok(TermTable { case, terms, total, probes })
}

/// All terms at every entry of [`PROBES`], in that order.
pub fn evaluate_probes(case: Case, grid: &QuadratureGrid) -> Result<Vec<ProbeTerms>, VarError> {
    PROBES.par_iter().map(|&(k1, k2)| probe_terms(case, k1, k2, grid)).collect()
}

/// Decompose one term's probe values (ordered as [`PROBES`]) and recover both coefficients.
pub fn term_value(name: &str, vals: &[f64], tol: f64) -> Result<FunctionalValue, VarError> {
    let (alpha, beta, spread) = decompose(name, &PROBES, vals)?;
    Ok(FunctionalValue {
        name: name.to_string(),
        k: recover(&format!("{name} [K]"), alpha, tol)?,
        h2: recover(&format!("{name} [H^2]"), beta, tol)?,
        k_numeric: alpha,
        h2_numeric: beta,
        probe_spread: spread,
    })
}

// ---------------------------------------------------------------------------
// Reference values and expansion

fn cv(p: (i64, i64), q: (i64, i64)) -> CoefficientVector {
    CoefficientVector::exact(rational(p.0, p.1), rational(q.0, q.1))
}

/// Known (K, H²) coefficients of each term, as π(p + q ln 2).
pub fn reference_terms(case: Case) -> [(CoefficientVector, CoefficientVector); 5] {
    match case {
        Case::Willmore => [
            (cv((-8, 7), (0, 1)), cv((863, 280), (-3, 1))),
            (cv((23, 14), (0, 1)), cv((-291, 560), (0, 1))),
            (cv((4, 21), (0, 1)), cv((16, 35), (0, 1))),
            (cv((0, 1), (0, 1)), cv((-4, 1), (4, 1))),
            (cv((-4, 3), (0, 1)), cv((0, 1), (0, 1))),
        ],
        Case::Cmc => [
            (cv((-31, 270), (-4, 9)), cv((2201, 8640), (1, 9))),
            (cv((5, 14), (0, 1)), cv((-579, 2240), (0, 1))),
            (cv((64, 105), (0, 1)), cv((-4, 21), (0, 1))),
            (cv((-229, 945), (4, 9)), cv((113, 30240), (-1, 9))),
            (cv((-4, 5), (0, 1)), cv((4, 15), (0, 1))),
        ],
    }
}

/// Known total second derivative (K, H²) coefficients.
pub fn reference_total(case: Case) -> (CoefficientVector, CoefficientVector) {
    match case {
        Case::Willmore => (cv((1, 1), (0, 1)), cv((-3, 2), (1, 1))),
        Case::Cmc => (cv((1, 6), (0, 1)), cv((-35, 192), (0, 1))),
    }
}

/// c₀ + c₁λ + c₂λ² expansion of the energy (Willmore) or area (CMC) of the critical family.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Expansion {
    pub case: Case,
    pub kappa: (f64, f64),
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub c1_expected: f64,
    pub c2_expected: f64,
}

pub fn expected_c1(case: Case, h: f64) -> f64 {
    match case {
        Case::Willmore => -PI * h,
        Case::Cmc => -PI * h / 4.0,
    }
}

pub fn expected_c2(case: Case, k: f64, h: f64) -> f64 {
    match case {
        Case::Willmore => 0.5 * PI * (k + (LN_2 - 1.5) * h * h),
        Case::Cmc => 0.5 * PI * (k / 6.0 - 35.0 / 192.0 * h * h),
    }
}

pub fn assemble_expansion(case: Case, k1: f64, k2: f64, grid: &QuadratureGrid) -> Result<Expansion, VarError> {
    let p = probe_terms(case, k1, k2, grid)?;
    let base = functionals(&Immersion::new(&Expr::zero(), &MetricPerturbation::zero())?, Amplitudes::fixed(0.0, 0.0), grid)?;
    let (h, k) = (k1 + k2, k1 * k2);
    Ok(Expansion {
        case,
        kappa: (k1, k2),
        c0: pick(case, &base).value,
        c1: p.first_derivative,
        c2: 0.5 * p.total(),
        c1_expected: expected_c1(case, h),
        c2_expected: expected_c2(case, k, h),
    })
}

// ---------------------------------------------------------------------------
// Cancellation identities

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Cancellations {
    /// D₂V g̃″ + D₂²V(g̃′, g̃′)
    pub volume: f64,
    /// ∫_{∂} D₂B₁ g̃″ dS
    pub odd_boundary: f64,
}

/// Both identities with the free ∂h symbols set to `symbols`.
pub fn cancellations(k1: f64, k2: f64, symbols: f64, grid: &QuadratureGrid) -> Result<Cancellations, VarError> {
    let g1 = Immersion::new(&Expr::zero(), &MetricPerturbation::first_order(k1, k2))?;
    let g2 = Immersion::new(&Expr::zero(), &MetricPerturbation::second_order(k1, k2).with_symbols(symbols))?;
    let along = Amplitudes::along(false, true);
    let v1 = functionals(&g1, along, grid)?.volume.d2;
    let v2 = functionals(&g2, along, grid)?.volume.d1;
    let odd = integrate_equator_jet(|phi| boundary_b1(&g2, phi, along))?.d1;
    Ok(Cancellations { volume: v1 + v2, odd_boundary: odd })
}

/// ω on the hemisphere at chart point (θ, φ), for callers that sample pointwise invariants.
pub fn chart_point(theta: f64, phi: f64) -> [f64; 3] {
    omega(theta.cos(), phi)
}
