//! Inverse link functions and their curvature constants.
//!
//! A link is described by its mean function `mu`, the derivative `mu_dot`
//! and a primitive `b` (so that `b' = mu`). Only links with bounded rewards
//! ship: the logistic link and the identity link.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{GlbError, Result};

/// Number of grid points used when the constants have no closed form.
pub const CONSTANT_SCAN_POINTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkKind {
    Logistic,
    Identity,
}

impl fmt::Display for LinkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LinkKind::Logistic => f.write_str("logistic"),
            LinkKind::Identity => f.write_str("identity"),
        }
    }
}

impl FromStr for LinkKind {
    type Err = GlbError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic" => Ok(LinkKind::Logistic),
            "identity" => Ok(LinkKind::Identity),
            other => Err(GlbError::InvalidConfig(format!("unknown link kind '{other}'"))),
        }
    }
}

/// Inverse link function with derivative and primitive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub kind: LinkKind,
}

pub fn make_link(kind: LinkKind) -> LinkSpec {
    LinkSpec { kind }
}

impl LinkSpec {
    pub fn logistic() -> Self {
        make_link(LinkKind::Logistic)
    }

    pub fn identity() -> Self {
        make_link(LinkKind::Identity)
    }

    /// Mean function `mu(z)`.
    #[inline]
    pub fn eval(&self, z: f64) -> f64 {
        match self.kind {
            LinkKind::Logistic => sigmoid(z),
            LinkKind::Identity => z,
        }
    }

    /// Derivative `mu'(z)`.
    #[inline]
    pub fn deriv(&self, z: f64) -> f64 {
        match self.kind {
            LinkKind::Logistic => {
                let m = sigmoid(z);
                m * (1.0 - m)
            }
            LinkKind::Identity => 1.0,
        }
    }

    /// Primitive `b(z)` with `b' = mu`.
    #[inline]
    pub fn primitive(&self, z: f64) -> f64 {
        match self.kind {
            // softplus, stable for large |z|
            LinkKind::Logistic => z.max(0.0) + (-z.abs()).exp().ln_1p(),
            LinkKind::Identity => 0.5 * z * z,
        }
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `k_mu = sup mu'`, `c_mu = inf mu'` over `|z| <= S L`, and `r_mu = k_mu / c_mu`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkConstants {
    pub k_mu: f64,
    pub c_mu: f64,
    pub r_mu: f64,
}

impl LinkConstants {
    fn new(k_mu: f64, c_mu: f64) -> Result<Self> {
        if !(c_mu > 0.0) || !c_mu.is_finite() || !(k_mu >= c_mu) {
            return Err(GlbError::InvalidLink(format!(
                "need 0 < c_mu <= k_mu, got c_mu = {c_mu}, k_mu = {k_mu}"
            )));
        }
        Ok(Self {
            k_mu,
            c_mu,
            r_mu: k_mu / c_mu,
        })
    }

    /// Constants of a linear model (`mu' == 1`).
    pub fn unit() -> Self {
        Self {
            k_mu: 1.0,
            c_mu: 1.0,
            r_mu: 1.0,
        }
    }
}

pub fn compute_constants(link: &LinkSpec, s_bound: f64, l_bound: f64) -> Result<LinkConstants> {
    if !(s_bound > 0.0) || !(l_bound > 0.0) {
        return Err(GlbError::InvalidConfig(format!(
            "S and L must be positive, got S = {s_bound}, L = {l_bound}"
        )));
    }
    let radius = s_bound * l_bound;
    match link.kind {
        // mu' is even and decreasing in |z|.
        LinkKind::Logistic => LinkConstants::new(link.deriv(0.0), link.deriv(radius)),
        LinkKind::Identity => Ok(LinkConstants::unit()),
    }
}

/// Dense grid scan of `mu'` over `[-radius, radius]`, for links without a closed form.
pub fn scan_constants(link: &LinkSpec, radius: f64) -> Result<LinkConstants> {
    let n = CONSTANT_SCAN_POINTS;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..n {
        let z = -radius + 2.0 * radius * (i as f64) / ((n - 1) as f64);
        let v = link.deriv(z);
        lo = lo.min(v);
        hi = hi.max(v);
    }
    LinkConstants::new(hi, lo)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> impl Iterator<Item = f64> {
        (0..=600).map(|i| -3.0 + 0.01 * i as f64)
    }

    #[test]
    fn logistic_values() {
        let l = LinkSpec::logistic();
        assert_eq!(l.eval(0.0), 0.5);
        assert_eq!(l.deriv(0.0), 0.25);
        assert!((l.eval(40.0) - 1.0).abs() < 1e-15);
        assert!(l.eval(-800.0) >= 0.0);
        assert!(l.primitive(800.0).is_finite());
    }

    #[test]
    fn identity_primitive() {
        assert_eq!(LinkSpec::identity().primitive(2.0), 2.0);
    }

    #[test]
    fn links_are_increasing_with_consistent_derivatives() {
        let h = 1e-4;
        for link in [LinkSpec::logistic(), LinkSpec::identity()] {
            let mut prev = f64::NEG_INFINITY;
            for z in grid() {
                let m = link.eval(z);
                assert!(m > prev);
                prev = m;
                let db = (link.primitive(z + h) - link.primitive(z - h)) / (2.0 * h);
                assert!((db - m).abs() < 1e-6, "{:?} b' at {z}", link.kind);
                let dm = (link.eval(z + h) - link.eval(z - h)) / (2.0 * h);
                assert!((dm - link.deriv(z)).abs() < 1e-6, "{:?} mu' at {z}", link.kind);
            }
        }
    }

    #[test]
    fn logistic_constants_unit_box() {
        let c = compute_constants(&LinkSpec::logistic(), 1.0, 1.0).unwrap();
        assert_eq!(c.k_mu, 0.25);
        let e = std::f64::consts::E;
        assert!((c.c_mu - e / (1.0 + e).powi(2)).abs() < 1e-15);
        assert!((c.c_mu - 0.196612).abs() < 1e-6);
        assert!((c.r_mu - 1.27154).abs() < 1e-5);
    }

    #[test]
    fn identity_constants_are_one() {
        for (s, l) in [(1.0, 1.0), (3.0, 0.2), (100.0, 7.0)] {
            let c = compute_constants(&LinkSpec::identity(), s, l).unwrap();
            assert_eq!((c.k_mu, c.c_mu, c.r_mu), (1.0, 1.0, 1.0));
        }
    }

    #[test]
    fn scan_agrees_with_closed_form() {
        for radius in [0.3, 1.0, 2.5, 6.0] {
            let closed = compute_constants(&LinkSpec::logistic(), radius, 1.0).unwrap();
            let scan = scan_constants(&LinkSpec::logistic(), radius).unwrap();
            assert!((closed.c_mu - scan.c_mu).abs() < 1e-9);
            // 10^4 points: z = 0 itself is not on the grid
            assert!((closed.k_mu - scan.k_mu).abs() < 1e-7);
        }
    }

    #[test]
    fn ratio_depends_only_on_product() {
        let a = compute_constants(&LinkSpec::logistic(), 2.0, 1.0).unwrap();
        let b = compute_constants(&LinkSpec::logistic(), 1.0, 2.0).unwrap();
        assert_eq!(a.r_mu, b.r_mu);
        assert!(a.r_mu >= 1.0);
    }

    #[test]
    fn rejects_bad_bounds() {
        assert!(compute_constants(&LinkSpec::logistic(), 0.0, 1.0).is_err());
        assert!(compute_constants(&LinkSpec::logistic(), 1.0, -1.0).is_err());
    }

    #[test]
    fn parse_kind() {
        assert_eq!("logistic".parse::<LinkKind>().unwrap(), LinkKind::Logistic);
        assert!("probit".parse::<LinkKind>().is_err());
    }
}
