//! Discretized Filipović space.
//!
//! A curve is stored by its values on a uniform maturity grid `0 = x_0 < … < x_{n-1} = x_max`
//! together with its limit at infinity (the tail). The weight is `w(x) = e^{cx}`.
//!
//! The inner product is the exact Filipović inner product of the piecewise-linear
//! interpolants of the node values:
//!
//! ```text
//! <f, g> = f(0) g(0) + sum_i (Δf_i / Δx)(Δg_i / Δx) ∫_{x_i}^{x_{i+1}} w(x) dx
//! ```
//!
//! so every bound that holds in the continuous space (point evaluation, multiplication)
//! holds for the grid representation as well. Contributions beyond `x_max` are zero.

use std::fmt;
use std::sync::Arc;

use crate::error::{invalid, Error, Result};

/// Relative mass `1 / w(x_max)` left beyond the default truncation horizon.
pub const DEFAULT_TAIL_MASS: f64 = 1e-6;

/// Documented slack on operator-bound assertions made on grid curves.
pub const GRID_SLACK: f64 = 1e-2;

const NODE_SNAP_TOL: f64 = 1e-9;

/// Weight parameter, maturity grid, and the derived space constants.
#[derive(Debug, Clone)]
pub struct SpaceConfig {
    weight_param: f64,
    x_max: f64,
    n_nodes: usize,
    spacing: f64,
    // ∫_{x_i}^{x_{i+1}} w(x) dx / Δx², one entry per interval.
    stiffness: Vec<f64>,
}

impl PartialEq for SpaceConfig {
    fn eq(&self, other: &Self) -> bool {
        self.weight_param == other.weight_param
            && self.x_max == other.x_max
            && self.n_nodes == other.n_nodes
    }
}

impl SpaceConfig {
    pub fn new(weight_param: f64, x_max: f64, n_nodes: usize) -> Result<Arc<Self>> {
        if !(weight_param.is_finite() && weight_param > 0.0) {
            return Err(invalid("weight_param", "must be positive and finite"));
        }
        if !(x_max.is_finite() && x_max > 0.0) {
            return Err(invalid("x_max", "must be positive and finite"));
        }
        if n_nodes < 3 {
            return Err(invalid("n_nodes", "at least 3 nodes are required"));
        }
        let spacing = x_max / (n_nodes - 1) as f64;
        let c = weight_param;
        let stiffness = (0..n_nodes - 1)
            .map(|i| {
                let a = i as f64 * spacing;
                // (e^{c b} - e^{c a}) / c, written to avoid cancellation for small c·Δx.
                let mass = (c * a).exp() * (c * spacing).exp_m1() / c;
                mass / (spacing * spacing)
            })
            .collect();
        Ok(Arc::new(Self {
            weight_param,
            x_max,
            n_nodes,
            spacing,
            stiffness,
        }))
    }

    /// Grid whose horizon leaves at most [`DEFAULT_TAIL_MASS`] of `1/w` beyond `x_max`.
    pub fn with_default_horizon(weight_param: f64, n_nodes: usize) -> Result<Arc<Self>> {
        if !(weight_param.is_finite() && weight_param > 0.0) {
            return Err(invalid("weight_param", "must be positive and finite"));
        }
        Self::new(weight_param, Self::default_horizon(weight_param), n_nodes)
    }

    pub fn default_horizon(weight_param: f64) -> f64 {
        (1.0 / DEFAULT_TAIL_MASS).ln() / weight_param
    }

    pub fn weight_param(&self) -> f64 {
        self.weight_param
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn node(&self, i: usize) -> f64 {
        if i + 1 == self.n_nodes {
            self.x_max
        } else {
            i as f64 * self.spacing
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_nodes).map(|i| self.node(i))
    }

    pub fn weight(&self, x: f64) -> f64 {
        (self.weight_param * x).exp()
    }

    /// `(∫ w^{-1})^{1/2}`, which is `c^{-1/2}` for the exponential weight.
    pub fn w_bar(&self) -> f64 {
        self.weight_param.recip().sqrt()
    }

    /// Uniform bound on the point-evaluation operator norm.
    pub fn k_delta(&self) -> f64 {
        let wb2 = 1.0 / self.weight_param;
        (2.0 * wb2.max(1.0)).sqrt()
    }

    /// Bound constant for multiplicative operators, `‖M_h‖ ≤ K_M ‖h‖`.
    pub fn k_mult(&self) -> f64 {
        (5.0 + 4.0 / self.weight_param).sqrt()
    }

    /// `∫_0^x w^{-1}(u) du`.
    pub fn inverse_weight_integral(&self, x: f64) -> f64 {
        -(-self.weight_param * x).exp_m1() / self.weight_param
    }

    /// Number of grid steps in `dt`, if `dt` is an integer multiple of the spacing.
    pub fn node_multiple(&self, dt: f64) -> Option<usize> {
        if !(dt.is_finite() && dt >= 0.0) {
            return None;
        }
        let ratio = dt / self.spacing;
        let k = ratio.round();
        if (ratio - k).abs() <= NODE_SNAP_TOL * ratio.max(1.0) {
            Some(k as usize)
        } else {
            None
        }
    }

    /// Index of the node sitting at `x`, if any.
    pub fn node_index(&self, x: f64) -> Option<usize> {
        self.node_multiple(x).filter(|&k| k < self.n_nodes)
    }
}

/// Classification of a curve against the positive and negative cones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Cone {
    /// All nodes and the tail are strictly positive (`H_>`).
    StrictlyPositive,
    /// All nodes and the tail are strictly negative (`H_<`).
    StrictlyNegative,
    /// All nodes strictly positive, tail zero: in `H_+` but not `H_>`.
    PositiveOnNodes,
    /// Non-negative everywhere (`H_+`).
    NonNegative,
    Outside,
}

impl Cone {
    /// Whether multiplication by a curve of this class can be inverted.
    pub fn is_invertible(self) -> bool {
        matches!(self, Cone::StrictlyPositive | Cone::StrictlyNegative)
    }

    pub fn is_non_negative(self) -> bool {
        matches!(
            self,
            Cone::StrictlyPositive | Cone::PositiveOnNodes | Cone::NonNegative
        )
    }
}

impl fmt::Display for Cone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Cone::StrictlyPositive => "H_>",
            Cone::StrictlyNegative => "H_<",
            Cone::PositiveOnNodes => "H_+ (strict on nodes)",
            Cone::NonNegative => "H_+",
            Cone::Outside => "none",
        };
        f.write_str(s)
    }
}

/// A forward curve sampled on the grid of its [`SpaceConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct CurveGrid {
    config: Arc<SpaceConfig>,
    values: Vec<f64>,
    tail: f64,
}

impl CurveGrid {
    /// Builds a curve from node values. The tail defaults to the last node value.
    pub fn new(config: &Arc<SpaceConfig>, values: Vec<f64>, tail: Option<f64>) -> Result<Self> {
        if values.len() != config.n_nodes {
            return Err(invalid(
                "values",
                format!("expected {} nodes, got {}", config.n_nodes, values.len()),
            ));
        }
        let tail = tail.unwrap_or(values[values.len() - 1]);
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Range(format!("node {i} is not finite")));
        }
        if !tail.is_finite() {
            return Err(Error::Range("tail is not finite".into()));
        }
        Ok(Self {
            config: Arc::clone(config),
            values,
            tail,
        })
    }

    /// Samples `f` on the grid; `tail` overrides the limit, otherwise the last node is used.
    pub fn from_fn(
        config: &Arc<SpaceConfig>,
        f: impl Fn(f64) -> f64,
        tail: Option<f64>,
    ) -> Result<Self> {
        let values = config.nodes().map(f).collect();
        Self::new(config, values, tail)
    }

    pub fn constant(config: &Arc<SpaceConfig>, level: f64) -> Self {
        Self {
            config: Arc::clone(config),
            values: vec![level; config.n_nodes],
            tail: level,
        }
    }

    pub fn zeros(config: &Arc<SpaceConfig>) -> Self {
        Self::constant(config, 0.0)
    }

    /// Internal constructor for values produced by finite arithmetic on finite inputs.
    pub(crate) fn from_parts(config: &Arc<SpaceConfig>, values: Vec<f64>, tail: f64) -> Self {
        debug_assert_eq!(values.len(), config.n_nodes);
        Self {
            config: Arc::clone(config),
            values,
            tail,
        }
    }

    pub fn config(&self) -> &Arc<SpaceConfig> {
        &self.config
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn tail(&self) -> f64 {
        self.tail
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.tail.is_finite() && self.values.iter().all(|v| v.is_finite())
    }

    pub(crate) fn same_space(&self, other: &CurveGrid) -> Result<()> {
        if Arc::ptr_eq(&self.config, &other.config) || *self.config == *other.config {
            Ok(())
        } else {
            Err(Error::ConfigMismatch)
        }
    }

    pub fn inner_product(&self, other: &CurveGrid) -> Result<f64> {
        self.same_space(other)?;
        Ok(self.inner_unchecked(other))
    }

    fn inner_unchecked(&self, other: &CurveGrid) -> f64 {
        let f = &self.values;
        let g = &other.values;
        let integral: f64 = self
            .config
            .stiffness
            .iter()
            .enumerate()
            .map(|(i, k)| (f[i + 1] - f[i]) * (g[i + 1] - g[i]) * k)
            .sum();
        f[0] * g[0] + integral
    }

    pub fn norm(&self) -> f64 {
        self.inner_unchecked(self).max(0.0).sqrt()
    }

    /// Point evaluation `δ_x f`, linear between nodes and equal to the tail beyond `x_max`.
    pub fn delta_eval(&self, x: f64) -> Result<f64> {
        if x.is_nan() || x < 0.0 {
            return Err(Error::Domain(format!(
                "point evaluation at negative maturity {x}"
            )));
        }
        Ok(self.eval_unchecked(x))
    }

    pub(crate) fn eval_unchecked(&self, x: f64) -> f64 {
        let cfg = &self.config;
        if x > cfg.x_max {
            return self.tail;
        }
        let ratio = x / cfg.spacing;
        let k = ratio.round();
        if (ratio - k).abs() <= NODE_SNAP_TOL * ratio.max(1.0) {
            return self.values[(k as usize).min(cfg.n_nodes - 1)];
        }
        let i = (ratio.floor() as usize).min(cfg.n_nodes - 2);
        let frac = ratio - i as f64;
        self.values[i] + frac * (self.values[i + 1] - self.values[i])
    }

    /// The dual of point evaluation: `y ↦ c_val (1 + ∫_0^{x∧y} w^{-1})`.
    pub fn delta_dual(config: &Arc<SpaceConfig>, c_val: f64, x: f64) -> Result<Self> {
        if x.is_nan() || x < 0.0 {
            return Err(Error::Domain(format!("dual evaluation at negative maturity {x}")));
        }
        let values = config
            .nodes()
            .map(|y| c_val * (1.0 + config.inverse_weight_integral(x.min(y))))
            .collect();
        let tail = c_val * (1.0 + config.inverse_weight_integral(x));
        Ok(Self::from_parts(config, values, tail))
    }

    /// Shift semigroup `S_dt f (x) = f(x + dt)`. Exact index shift when `dt` is a node multiple.
    pub fn shift(&self, dt: f64) -> Result<Self> {
        if dt.is_nan() || dt < 0.0 {
            return Err(Error::Domain(format!("negative shift {dt}")));
        }
        let cfg = &self.config;
        let n = cfg.n_nodes;
        let values = match cfg.node_multiple(dt) {
            Some(k) => (0..n)
                .map(|i| if i + k < n { self.values[i + k] } else { self.tail })
                .collect(),
            None => cfg.nodes().map(|x| self.eval_unchecked(x + dt)).collect(),
        };
        Ok(Self::from_parts(cfg, values, self.tail))
    }

    pub fn cone_membership(&self) -> Cone {
        let nodes_pos = self.values.iter().all(|&v| v > 0.0);
        let nodes_neg = self.values.iter().all(|&v| v < 0.0);
        let nodes_nonneg = self.values.iter().all(|&v| v >= 0.0);
        if nodes_pos && self.tail > 0.0 {
            Cone::StrictlyPositive
        } else if nodes_neg && self.tail < 0.0 {
            Cone::StrictlyNegative
        } else if nodes_pos && self.tail >= 0.0 {
            Cone::PositiveOnNodes
        } else if nodes_nonneg && self.tail >= 0.0 {
            Cone::NonNegative
        } else {
            Cone::Outside
        }
    }

    /// `a·self + b·other`.
    pub fn lin_comb(&self, a: f64, other: &CurveGrid, b: f64) -> Result<Self> {
        self.same_space(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Ok(Self::from_parts(
            &self.config,
            values,
            a * self.tail + b * other.tail,
        ))
    }

    pub fn sub(&self, other: &CurveGrid) -> Result<Self> {
        self.lin_comb(1.0, other, -1.0)
    }

    pub fn scale(&self, a: f64) -> Self {
        self.map(|v| a * v)
    }

    /// Applies `f` to every node and to the tail.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let values = self.values.iter().map(|&v| f(v)).collect();
        Self::from_parts(&self.config, values, f(self.tail))
    }

    /// Largest node-wise absolute difference, tail included.
    pub fn max_abs_diff(&self, other: &CurveGrid) -> Result<f64> {
        self.same_space(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold((self.tail - other.tail).abs(), f64::max))
    }
}
