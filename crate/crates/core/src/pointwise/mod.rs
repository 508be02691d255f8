//! Point-wise operating maps `Ψ(t, f)(x) = ψ(t, f(x))`.
//!
//! A [`PointwiseMap`] carries the scalar kernel `ψ(t, y)` with its partial derivatives and
//! the domain of `y` on which it is defined. Lifting it to a curve evaluates the kernel at
//! every node and at the tail.

mod conditions;
mod families;
mod registry;

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::space::CurveGrid;

pub use conditions::{
    check_derivative_consistency, check_positivity_conditions, estimate_linear_growth,
    estimate_local_lipschitz, lipschitz_bound, GrowthEstimate, LatticeConfig, LipschitzBound,
    PositivityReport,
};
pub use families::{
    make_cev, make_cev_tilde, make_exp_form, make_separable, CevTildeExponent, TimeFactor,
};
pub use registry::{builtin, builtin_names, Params};

/// Scalar kernel `(t, y) ↦ value`.
pub type ScalarFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Admissible values of `y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    AllReals,
    NonNegative,
    Positive,
}

impl Domain {
    pub fn contains(self, y: f64) -> bool {
        match self {
            Domain::AllReals => y.is_finite(),
            Domain::NonNegative => y.is_finite() && y >= 0.0,
            Domain::Positive => y.is_finite() && y > 0.0,
        }
    }

    /// `self ⊆ other`.
    pub fn is_subset_of(self, other: Domain) -> bool {
        use Domain::*;
        matches!(
            (self, other),
            (_, AllReals) | (NonNegative | Positive, NonNegative) | (Positive, Positive)
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            Domain::AllReals => "all_reals",
            Domain::NonNegative => "nonneg",
            Domain::Positive => "pos",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "all_reals" => Some(Domain::AllReals),
            "nonneg" => Some(Domain::NonNegative),
            "pos" => Some(Domain::Positive),
            _ => None,
        }
    }
}

/// Which construction produced a map; checkers use it to pick specialised arguments.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    Custom,
    Cev { gamma: f64 },
    CevTilde { gamma: f64, eps: f64 },
    Separable,
    ExpForm,
}

#[derive(Clone)]
pub struct PointwiseMap {
    name: String,
    domain: Domain,
    family: Family,
    psi: ScalarFn,
    d_psi_dy: ScalarFn,
    d_psi_dt: Option<ScalarFn>,
    d2_psi_dy2: Option<ScalarFn>,
    lipschitz_unsafe: bool,
}

impl fmt::Debug for PointwiseMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PointwiseMap")
            .field("name", &self.name)
            .field("domain", &self.domain)
            .field("family", &self.family)
            .field("has_d_psi_dt", &self.d_psi_dt.is_some())
            .field("has_d2_psi_dy2", &self.d2_psi_dy2.is_some())
            .field("lipschitz_unsafe", &self.lipschitz_unsafe)
            .finish()
    }
}

impl PointwiseMap {
    pub fn new<P, D>(name: impl Into<String>, domain: Domain, psi: P, d_psi_dy: D) -> Self
    where
        P: Fn(f64, f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            domain,
            family: Family::Custom,
            psi: Arc::new(psi),
            d_psi_dy: Arc::new(d_psi_dy),
            d_psi_dt: None,
            d2_psi_dy2: None,
            lipschitz_unsafe: false,
        }
    }

    pub fn with_time_derivative<F>(mut self, d_psi_dt: F) -> Self
    where
        F: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        self.d_psi_dt = Some(Arc::new(d_psi_dt));
        self
    }

    pub fn with_second_derivative<F>(mut self, d2_psi_dy2: F) -> Self
    where
        F: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        self.d2_psi_dy2 = Some(Arc::new(d2_psi_dy2));
        self
    }

    pub(crate) fn with_family(mut self, family: Family) -> Self {
        self.family = family;
        self
    }

    pub(crate) fn with_lipschitz_unsafe(mut self, flag: bool) -> Self {
        self.lipschitz_unsafe = flag;
        self
    }

    /// Narrows the domain; widening is refused.
    pub fn restrict(mut self, domain: Domain) -> Result<Self> {
        if !domain.is_subset_of(self.domain) {
            return Err(Error::Domain(format!(
                "cannot widen `{}` from {} to {}",
                self.name,
                self.domain.name(),
                domain.name()
            )));
        }
        self.domain = domain;
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    /// Set for CEV exponents strictly between 1 and 2, where `f ↦ f^γ` is not locally
    /// Lipschitz in the curve space.
    pub fn lipschitz_unsafe(&self) -> bool {
        self.lipschitz_unsafe
    }

    pub fn has_time_derivative(&self) -> bool {
        self.d_psi_dt.is_some()
    }

    pub fn has_second_derivative(&self) -> bool {
        self.d2_psi_dy2.is_some()
    }

    pub(crate) fn psi_fn(&self) -> &ScalarFn {
        &self.psi
    }

    pub(crate) fn d_psi_dy_fn(&self) -> &ScalarFn {
        &self.d_psi_dy
    }

    pub(crate) fn d_psi_dt_fn(&self) -> Option<&ScalarFn> {
        self.d_psi_dt.as_ref()
    }

    pub(crate) fn d2_psi_dy2_fn(&self) -> Option<&ScalarFn> {
        self.d2_psi_dy2.as_ref()
    }

    fn check(&self, y: f64) -> Result<()> {
        if self.domain.contains(y) || (self.domain == Domain::Positive && y == 0.0) {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "`{}` is not defined at {y} (domain {})",
                self.name,
                self.domain.name()
            )))
        }
    }

    fn eval_with(&self, f: &ScalarFn, what: &str, t: f64, y: f64) -> Result<f64> {
        self.check(y)?;
        if self.domain == Domain::Positive && y == 0.0 {
            return limit_at_zero(|y| f(t, y)).ok_or_else(|| {
                Error::Domain(format!(
                    "`{}`: {what} has no finite limit at 0",
                    self.name
                ))
            });
        }
        Ok(f(t, y))
    }

    /// `ψ(t, y)`. On a positive domain, `y = 0` uses the one-sided limit when it exists.
    pub fn value(&self, t: f64, y: f64) -> Result<f64> {
        self.eval_with(&self.psi, "ψ", t, y)
    }

    pub fn d_dy(&self, t: f64, y: f64) -> Result<f64> {
        self.eval_with(&self.d_psi_dy, "∂_yψ", t, y)
    }

    pub fn d_dt(&self, t: f64, y: f64) -> Result<f64> {
        let f = self
            .d_psi_dt
            .as_ref()
            .ok_or_else(|| Error::Capability(format!("`{}` has no time derivative", self.name)))?;
        self.eval_with(f, "∂_tψ", t, y)
    }

    pub fn d2_dy2(&self, t: f64, y: f64) -> Result<f64> {
        let f = self.d2_psi_dy2.as_ref().ok_or_else(|| {
            Error::Capability(format!("`{}` has no second derivative", self.name))
        })?;
        self.eval_with(f, "∂_yyψ", t, y)
    }

    /// `Ψ(t, f)`: node-wise `ψ(t, f(x_i))`, tail `ψ(t, f.tail)`.
    pub fn lift(&self, t: f64, f: &CurveGrid) -> Result<CurveGrid> {
        let n = f.len();
        let mut values = Vec::with_capacity(n);
        for (i, &y) in f.values().iter().enumerate() {
            values.push(self.lift_point(t, y, i)?);
        }
        let tail = self.lift_point(t, f.tail(), n)?;
        Ok(CurveGrid::from_parts(f.config(), values, tail))
    }

    fn lift_point(&self, t: f64, y: f64, node: usize) -> Result<f64> {
        let v = if self.domain.contains(y) {
            (self.psi)(t, y)
        } else {
            self.value(t, y).map_err(|_| Error::OutsideDomain {
                map: self.name.clone(),
                domain: self.domain.name(),
                node,
                value: y,
            })?
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Range(format!(
                "`{}` is not finite at node {node} (argument {y})",
                self.name
            )))
        }
    }
}

/// `lim_{y→0+} g(y)` when successive evaluations agree.
pub(crate) fn limit_at_zero(g: impl Fn(f64) -> f64) -> Option<f64> {
    let probes = [1e-9, 1e-12, 1e-15];
    let vals: Vec<f64> = probes.iter().map(|&y| g(y)).collect();
    if vals.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let last = vals[2];
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-6 * (1.0 + b.abs());
    (close(vals[1], last) && close(vals[0], last)).then_some(last)
}

/// Drift and diffusion kernels of the point-wise SPDE.
#[derive(Debug, Clone)]
pub struct CoefficientSpec {
    pub drift: PointwiseMap,
    pub diffusion: PointwiseMap,
}

impl CoefficientSpec {
    pub fn new(drift: PointwiseMap, diffusion: PointwiseMap) -> Result<Self> {
        if !diffusion.domain().is_subset_of(drift.domain()) {
            return Err(Error::Domain(format!(
                "diffusion domain {} is not contained in drift domain {}",
                diffusion.domain().name(),
                drift.domain().name()
            )));
        }
        Ok(Self { drift, diffusion })
    }

    /// Zero drift and the given diffusion.
    pub fn driftless(diffusion: PointwiseMap) -> Self {
        Self {
            drift: registry::zero(),
            diffusion,
        }
    }

    /// Smallest domain on which both kernels are defined.
    pub fn state_domain(&self) -> Domain {
        self.diffusion.domain()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::SpaceConfig;

    #[test]
    fn lift_identity_and_square() {
        let cfg = SpaceConfig::with_default_horizon(1.0, 101).unwrap();
        let f = CurveGrid::from_fn(&cfg, |x| (0.4 * x).sin(), None).unwrap();
        let id = PointwiseMap::new("id", Domain::AllReals, |_, y| y, |_, _| 1.0);
        assert_eq!(id.lift(0.0, &f).unwrap(), f);
        let sq = PointwiseMap::new("sq", Domain::AllReals, |_, y| y * y, |_, y| 2.0 * y);
        let nine = sq.lift(1.0, &CurveGrid::constant(&cfg, 3.0)).unwrap();
        assert_eq!(nine, CurveGrid::constant(&cfg, 9.0));
    }

    #[test]
    fn lift_reports_offending_node() {
        let cfg = SpaceConfig::new(1.0, 4.0, 5).unwrap();
        let f = CurveGrid::new(&cfg, vec![1.0, 0.5, -0.2, 0.3, 0.1], None).unwrap();
        let root = PointwiseMap::new("root", Domain::NonNegative, |_, y| y.sqrt(), |_, y| {
            0.5 / y.sqrt()
        });
        match root.lift(0.0, &f).unwrap_err() {
            Error::OutsideDomain { node, value, .. } => {
                assert_eq!(node, 2);
                assert_eq!(value, -0.2);
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn positive_domain_uses_limit_at_zero() {
        let lin = PointwiseMap::new("lin", Domain::Positive, |_, y| 2.0 * y, |_, _| 2.0);
        assert_eq!(lin.d_dy(0.0, 0.0).unwrap(), 2.0);
        assert!(lin.value(0.0, 0.0).unwrap().abs() < 1e-12);
        assert!(lin.value(0.0, -1.0).is_err());
        let root = PointwiseMap::new("root", Domain::Positive, |_, y: f64| y.sqrt(), |_, y| {
            0.5 / y.sqrt()
        });
        assert!(root.d_dy(0.0, 0.0).is_err());
    }

    #[test]
    fn missing_derivatives_are_capability_errors() {
        let m = PointwiseMap::new("m", Domain::AllReals, |_, y| y, |_, _| 1.0);
        assert!(matches!(m.d_dt(0.0, 1.0), Err(Error::Capability(_))));
        assert!(matches!(m.d2_dy2(0.0, 1.0), Err(Error::Capability(_))));
    }

    #[test]
    fn domain_containment() {
        use Domain::*;
        assert!(Positive.is_subset_of(NonNegative));
        assert!(NonNegative.is_subset_of(AllReals));
        assert!(!AllReals.is_subset_of(Positive));
        let drift = PointwiseMap::new("d", Positive, |_, y| y, |_, _| 1.0);
        let diff = PointwiseMap::new("s", AllReals, |_, y| y, |_, _| 1.0);
        assert!(CoefficientSpec::new(drift, diff).is_err());
    }
}
