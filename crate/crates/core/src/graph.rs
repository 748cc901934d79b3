//! Curvature of graph surfaces z = u(x, y) and the foliation criterion at a
//! critical point of the mean curvature.

use crate::expr::{parse, EvalError, Expr, ParseError, Program};
use crate::Case;
use serde::Serialize;
use std::collections::HashMap;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("point ({x}, {y}) outside the surface domain")]
    OutOfDomain { x: f64, y: f64 },
    #[error("Newton iteration did not converge after {iterations} steps (|grad H| = {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("degenerate Hessian of H (det = {det:e})")]
    Degenerate { det: f64 },
}

/// Nondegeneracy threshold on det ∇²H.
pub const DEGENERACY_TOL: f64 = 1e-10;
pub const NEWTON_TOL: f64 = 1e-12;
pub const NEWTON_MAX_ITER: usize = 50;

const OUTPUTS: [&str; 11] = ["H", "K", "Hx", "Hy", "Hxx", "Hxy", "Hyy", "Kx", "Ky", "ux", "uy"];

/// z = u(x, y) over a rectangle. Curvature expressions are built symbolically
/// once and compiled.
#[derive(Clone, Debug)]
pub struct GraphSurface {
    pub name: String,
    pub u: Expr,
    /// [(x_min, x_max), (y_min, y_max)]
    pub domain: [(f64, f64); 2],
    program: Program,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurvatureData {
    pub point: [f64; 2],
    pub h: f64,
    pub k: f64,
    pub grad_h: [f64; 2],
    /// Coordinate Hessian; equals the covariant one only at critical points.
    pub hess_h: [[f64; 2]; 2],
    pub grad_k: [f64; 2],
    pub grad_u: [f64; 2],
    pub hess_is_covariant: bool,
}

impl CurvatureData {
    pub fn hess_det(&self) -> f64 {
        let m = &self.hess_h;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }
}

/// Mean curvature (sum of principal curvatures, upward normal) and Gauss curvature
/// of the graph of `u`.
pub fn curvature_exprs(u: &Expr) -> (Expr, Expr) {
    let ux = u.diff("x");
    let uy = u.diff("y");
    let uxx = ux.diff("x");
    let uxy = ux.diff("y");
    let uyy = uy.diff("y");
    let one = Expr::one();
    let w = &one + ux.pow(2) + uy.pow(2);
    let num = (&one + uy.pow(2)) * &uxx - Expr::int(2) * &ux * &uy * &uxy + (&one + ux.pow(2)) * &uyy;
    let h = num / w.half_pow(3);
    let k = (&uxx * &uyy - uxy.pow(2)) / w.pow(2);
    (h, k)
}

impl GraphSurface {
    pub fn new(name: &str, u: Expr) -> Result<Self, GraphError> {
        Self::with_domain(name, u, [(-1.0, 1.0), (-1.0, 1.0)])
    }

    pub fn with_domain(name: &str, u: Expr, domain: [(f64, f64); 2]) -> Result<Self, GraphError> {
        let (h, k) = curvature_exprs(&u);
        let hx = h.diff("x");
        let hy = h.diff("y");
        let exprs = [
            h.clone(),
            k.clone(),
            hx.clone(),
            hy.clone(),
            hx.diff("x"),
            hx.diff("y"),
            hy.diff("y"),
            k.diff("x"),
            k.diff("y"),
            u.diff("x"),
            u.diff("y"),
        ];
        debug_assert_eq!(exprs.len(), OUTPUTS.len());
        let program = Program::compile(&exprs, &["x", "y"])?;
        Ok(GraphSurface { name: name.to_string(), u, domain, program })
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let [(x0, x1), (y0, y1)] = self.domain;
        (x0..=x1).contains(&x) && (y0..=y1).contains(&y)
    }

    pub fn curvature_at(&self, x: f64, y: f64) -> Result<CurvatureData, GraphError> {
        if !self.contains(x, y) {
            return Err(GraphError::OutOfDomain { x, y });
        }
        let v = self.program.eval_all(&[x, y])?;
        let grad_h = [v[2], v[3]];
        let critical = grad_h[0].hypot(grad_h[1]) < NEWTON_TOL.sqrt();
        Ok(CurvatureData {
            point: [x, y],
            h: v[0],
            k: v[1],
            grad_h,
            hess_h: [[v[4], v[5]], [v[5], v[6]]],
            grad_k: [v[7], v[8]],
            grad_u: [v[9], v[10]],
            hess_is_covariant: critical,
        })
    }

    /// Newton iteration on ∇H.
    pub fn find_critical_point(&self, guess: (f64, f64)) -> Result<CurvatureData, GraphError> {
        let (mut x, mut y) = guess;
        let mut last = f64::INFINITY;
        for _ in 0..=NEWTON_MAX_ITER {
            let c = self.curvature_at(x, y)?;
            let det = c.hess_det();
            last = c.grad_h[0].hypot(c.grad_h[1]);
            if last < NEWTON_TOL {
                if det.abs() < DEGENERACY_TOL {
                    return Err(GraphError::Degenerate { det });
                }
                return Ok(CurvatureData { hess_is_covariant: true, ..c });
            }
            if det.abs() < DEGENERACY_TOL {
                return Err(GraphError::Degenerate { det });
            }
            let [[a, b], [_, d]] = c.hess_h;
            let [gx, gy] = c.grad_h;
            x -= (d * gx - b * gy) / det;
            y -= (a * gy - b * gx) / det;
        }
        Err(GraphError::NoConvergence { iterations: NEWTON_MAX_ITER, residual: last })
    }

    /// Length of a coordinate vector in the metric induced on the graph.
    pub fn induced_norm(&self, c: &CurvatureData, v: [f64; 2]) -> f64 {
        let du = c.grad_u[0] * v[0] + c.grad_u[1] * v[1];
        (v[0] * v[0] + v[1] * v[1] + du * du).sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Foliates,
    DoesNotFoliate,
    Inconclusive,
}

impl Verdict {
    pub fn exit_code(self) -> i32 {
        match self {
            Verdict::Foliates => 0,
            Verdict::DoesNotFoliate => 1,
            Verdict::Inconclusive => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FoliationVerdict {
    pub case: Case,
    /// factor·(∇²H)⁻¹∇K in coordinates.
    pub v0_component: [f64; 2],
    /// Coordinate length |v⃗₀|.
    pub v0_norm_lower: f64,
    /// |v⃗₀|·√(1+|∇u|²).
    pub v0_norm_upper: f64,
    /// Length in the induced metric; lies in the bracket.
    pub v0_norm_induced: f64,
    pub verdict: Verdict,
}

pub fn verdict_from_bracket(lower: f64, upper: f64) -> Verdict {
    if upper < 1.0 {
        Verdict::Foliates
    } else if lower > 1.0 {
        Verdict::DoesNotFoliate
    } else {
        Verdict::Inconclusive
    }
}

pub fn foliation_criterion(s: &GraphSurface, p: &CurvatureData, case: Case) -> Result<FoliationVerdict, GraphError> {
    let det = p.hess_det();
    if det.abs() < DEGENERACY_TOL || !det.is_finite() {
        return Err(GraphError::Degenerate { det });
    }
    let [[a, b], [_, d]] = p.hess_h;
    let [kx, ky] = p.grad_k;
    let f = case.criterion_factor();
    let v = [f * (d * kx - b * ky) / det, f * (a * ky - b * kx) / det];
    let lower = v[0].hypot(v[1]);
    let gu2 = p.grad_u[0].powi(2) + p.grad_u[1].powi(2);
    let upper = lower * (1.0 + gu2).sqrt();
    Ok(FoliationVerdict {
        case,
        v0_component: v,
        v0_norm_lower: lower,
        v0_norm_upper: upper,
        v0_norm_induced: s.induced_norm(p, v),
        verdict: verdict_from_bracket(lower, upper),
    })
}

// ---------------------------------------------------------------------------
// Example family u = a x + a y + x y − c₁x³ − c₂y³.

pub const GALLERY_U: &str = "a*x + a*y + x*y - c1*x^3 - c2*y^3";

/// c₁ = c₂ making (0,0) a critical point of H.
pub fn gallery_c(a: f64) -> f64 {
    (a * a * a - a) / (3.0 + 9.0 * a * a + 6.0 * a.powi(4))
}

pub fn gallery_surface_with(a: f64, c1: f64, c2: f64) -> GraphSurface {
    let u = parse(GALLERY_U).expect("gallery expression parses");
    let mut m = HashMap::new();
    m.insert("a".to_string(), Expr::from_f64(a));
    m.insert("c1".to_string(), Expr::from_f64(c1));
    m.insert("c2".to_string(), Expr::from_f64(c2));
    GraphSurface::new(&format!("gallery a={a}"), u.substitute_all(&m)).expect("polynomial surface compiles")
}

pub fn gallery_surface(a: f64) -> GraphSurface {
    let c = gallery_c(a);
    gallery_surface_with(a, c, c)
}

/// ∂H/∂x at the origin for the family, in closed form.
pub fn gallery_hx_closed_form(a: f64, c1: f64) -> f64 {
    let a2 = a * a;
    -2.0 * (a - a * a2 + 3.0 * c1 + 9.0 * a2 * c1 + 6.0 * a2 * a2 * c1) / (1.0 + 2.0 * a2).powf(2.5)
}

/// ∇²H and ∇K at the origin for the critical-point family, in closed form.
pub fn hess_h_and_grad_k_gallery(a: f64) -> ([[f64; 2]; 2], [f64; 2]) {
    let a2 = a * a;
    let pre = -2.0 / (1.0 + 2.0 * a2).powf(3.5);
    let diag = pre * a2 * (-5.0 - 20.0 * a2 + a2 * a2) / (1.0 + a2);
    let off = pre * (1.0 + 4.0 * a2 + a2 * a2);
    let gk = 4.0 * a / (1.0 + 2.0 * a2).powi(3);
    ([[diag, off], [off, diag]], [gk, gk])
}

pub fn gallery_poly(a: f64) -> f64 {
    1.0 - 15.0 * a.powi(4) + 2.0 * a.powi(6)
}

/// |v⃗₀| without the case factor, in closed form.
pub fn gallery_v0_closed_form(a: f64) -> f64 {
    2.0 * a * (1.0 + a * a) * (2.0 * (1.0 + 2.0 * a * a)).sqrt() / gallery_poly(a).abs()
}

/// The zero of 1 − 15a⁴ + 2a⁶ in (0.5, 0.52), by bisection.
pub fn gallery_root() -> f64 {
    let (mut lo, mut hi) = (0.5, 0.52);
    debug_assert!(gallery_poly(lo) > 0.0 && gallery_poly(hi) < 0.0);
    while hi - lo > 1e-15 {
        let mid = 0.5 * (lo + hi);
        if gallery_poly(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

// ---------------------------------------------------------------------------
// Surface files

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum SurfaceFileError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: {source}")]
    Expr {
        line: usize,
        #[source]
        source: ParseError,
    },
    #[error("missing `u = ...` line")]
    MissingU,
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Clone, Debug)]
pub struct SurfaceSpec {
    pub name: String,
    pub u: Expr,
    pub params: Vec<(String, ParamValue)>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ParamValue {
    Value(f64),
    /// Derived from `a` by the critical-point condition of the example family.
    Auto,
}

/// Parse `name = ...`, `u = ...`, `params: a=..., c1=..., c2=...` (blank lines and
/// `#` comments ignored).
pub fn parse_surface_file(text: &str) -> Result<SurfaceSpec, SurfaceFileError> {
    let mut name = String::from("surface");
    let mut u = None;
    let mut params = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let lineno = i + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix("params:") {
            for item in rest.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                let (k, v) = item.split_once('=').ok_or_else(|| SurfaceFileError::Syntax {
                    line: lineno,
                    message: format!("expected key=value, got `{item}`"),
                })?;
                let v = v.trim();
                let value = if v == "auto" {
                    ParamValue::Auto
                } else {
                    ParamValue::Value(v.parse().map_err(|_| SurfaceFileError::Syntax {
                        line: lineno,
                        message: format!("bad number `{v}`"),
                    })?)
                };
                params.push((k.trim().to_string(), value));
            }
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| SurfaceFileError::Syntax {
            line: lineno,
            message: "expected `key = value`".into(),
        })?;
        match k.trim() {
            "name" => name = v.trim().to_string(),
            "u" => u = Some(parse(v).map_err(|source| SurfaceFileError::Expr { line: lineno, source })?),
            other => {
                return Err(SurfaceFileError::Syntax { line: lineno, message: format!("unknown key `{other}`") })
            }
        }
    }
    Ok(SurfaceSpec { name, u: u.ok_or(SurfaceFileError::MissingU)?, params })
}

impl SurfaceSpec {
    pub fn param(&self, key: &str) -> Option<&ParamValue> {
        self.params.iter().find(|(k, _)| k == key).map(|(_, v)| v)
    }

    /// Resolved numeric parameters; `auto` entries use the example-family formula in `a`.
    pub fn resolved_params(&self) -> Result<Vec<(String, f64)>, SurfaceFileError> {
        let a = match self.param("a") {
            Some(ParamValue::Value(a)) => Some(*a),
            _ => None,
        };
        self.params
            .iter()
            .map(|(k, v)| match v {
                ParamValue::Value(x) => Ok((k.clone(), *x)),
                ParamValue::Auto => a.map(|a| (k.clone(), gallery_c(a))).ok_or_else(|| SurfaceFileError::Syntax {
                    line: 0,
                    message: format!("`{k}=auto` needs a numeric `a`"),
                }),
            })
            .collect()
    }

    pub fn build(&self) -> Result<GraphSurface, SurfaceFileError> {
        let map: HashMap<String, Expr> =
            self.resolved_params()?.into_iter().map(|(k, v)| (k, Expr::from_f64(v))).collect();
        Ok(GraphSurface::new(&self.name, self.u.substitute_all(&map))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plane_is_flat() {
        let s = GraphSurface::new("zero", Expr::zero()).unwrap();
        let c = s.curvature_at(0.0, 0.0).unwrap();
        assert_eq!((c.h, c.k), (0.0, 0.0));
    }

    #[test]
    fn sign_convention_matches_closed_form() {
        let s = gallery_surface_with(0.3, 0.0, 0.0);
        let c = s.curvature_at(0.0, 0.0).unwrap();
        let expected = -2.0 * (0.3 - 0.027) / 1.18f64.powf(2.5);
        assert!((c.grad_h[0] - expected).abs() < 1e-14);
        assert!((expected + 0.360984).abs() < 1e-6);
    }

    #[test]
    fn gallery_origin_is_critical() {
        let c = gallery_surface(0.1).curvature_at(0.0, 0.0).unwrap();
        assert!(c.grad_h[0].abs() < 1e-12 && c.grad_h[1].abs() < 1e-12);
    }

    #[test]
    fn flat_surface_is_degenerate() {
        let s = GraphSurface::new("tilt", parse("x").unwrap()).unwrap();
        assert!(matches!(s.find_critical_point((0.1, 0.1)), Err(GraphError::Degenerate { .. })));
    }

    #[test]
    fn root_bracket() {
        assert_eq!(gallery_poly(0.5), 0.09375);
        assert!(gallery_poly(0.52) < 0.0);
        let xi = gallery_root();
        assert!(xi > 0.5 && xi < 0.52 && gallery_poly(xi).abs() < 1e-11);
        assert!((xi - 0.5127).abs() < 1e-4);
    }

    #[test]
    fn a_zero() {
        let (h, g) = hess_h_and_grad_k_gallery(0.0);
        assert_eq!(h, [[-0.0, -2.0], [-2.0, -0.0]]);
        assert_eq!(g, [0.0, 0.0]);
        assert_eq!(gallery_v0_closed_form(0.0), 0.0);
        assert!((gallery_v0_closed_form(0.3) - 1.14175).abs() < 1e-5);
    }

    #[test]
    fn surface_file_round_trip() {
        let spec = parse_surface_file("name = g\nu = a*x + a*y + x*y - c1*x^3 - c2*y^3\nparams: a=0.3, c1=auto, c2=auto\n")
            .unwrap();
        assert_eq!(spec.name, "g");
        let s = spec.build().unwrap();
        let c = s.curvature_at(0.0, 0.0).unwrap();
        assert!(c.grad_h[0].abs() < 1e-12);
        assert!(parse_surface_file("name = x").is_err());
        assert!(parse_surface_file("u = x +").is_err());
    }
}
