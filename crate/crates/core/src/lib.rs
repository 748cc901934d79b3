//! Numerics for small critical half-spheres attached to a domain boundary:
//! symbolic expressions, hemisphere quadrature, graph-surface curvature, the
//! linearized boundary-value problems, second-variation coefficients and
//! leaf-family foliation checks.

pub mod expr;
pub mod foliation;
pub mod graph;
pub mod linearized;
pub mod quadrature;
pub mod variational;

pub use expr::{parse, Dual, Expr, Jet2, Program, Rational, Scalar};
pub use quadrature::{CoefficientVector, QuadratureGrid};

use serde::Serialize;

/// Which variational problem: area-constrained Willmore, or volume-constrained CMC.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Case {
    Willmore,
    Cmc,
}

impl Case {
    /// ½ for Willmore, ⅓ for CMC.
    pub fn criterion_factor(self) -> f64 {
        match self {
            Case::Willmore => 0.5,
            Case::Cmc => 1.0 / 3.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Case::Willmore => "willmore",
            Case::Cmc => "cmc",
        }
    }
}

impl std::str::FromStr for Case {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "willmore" => Ok(Case::Willmore),
            "cmc" => Ok(Case::Cmc),
            other => Err(format!("unknown case `{other}` (expected willmore or cmc)")),
        }
    }
}
