//! Fixed inputs shared by the benchmarks in `benches/`.

use halfsphere_core::foliation::LeafFamily;
use halfsphere_core::graph::{gallery_surface, GraphSurface};
use halfsphere_core::{parse, Expr, QuadratureGrid};

pub fn default_grid() -> QuadratureGrid {
    QuadratureGrid::new(64, 128).expect("valid grid")
}

pub fn coarse_grid() -> QuadratureGrid {
    QuadratureGrid::new(24, 48).expect("valid grid")
}

/// A non-polynomial integrand with logs and quotients, roughly like the
/// first-order corrections.
pub fn sample_integrand() -> Expr {
    parse("(w1^2 - w2^2)^2 * ln(1 + w3) / (1 + w3) + w3^3 * w1^2").expect("parses")
}

pub fn gallery(a: f64) -> GraphSurface {
    gallery_surface(a)
}

pub fn perturbed_family(v: f64) -> LeafFamily {
    let f = [parse("w1*w3").unwrap(), Expr::zero(), parse("w3*(1 - w3)").unwrap()];
    LeafFamily::new(v, f, 0.05).expect("valid family")
}
