//! Lattice estimators for the growth, Lipschitz and positivity conditions on `ψ`.
//!
//! Every estimator samples `ψ` (or a derivative) on a product lattice of times in
//! `[0, t_max]` and dyadic bands of `y`. Bands are refined toward zero until the running
//! extremum stops moving for `stable_levels` consecutive bands or crosses the cap.

use rayon::prelude::*;
use serde::Serialize;

use super::{limit_at_zero, Domain, PointwiseMap, ScalarFn};
use crate::error::{invalid, Error, Result};
use crate::space::SpaceConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LatticeConfig {
    /// Points per dyadic `y` band.
    pub y_points: usize,
    pub t_points: usize,
    /// Suprema above this are reported as `+∞`.
    pub derivative_cap: f64,
    /// Infima below this are reported as `−∞`.
    pub inf_floor: f64,
    pub max_levels: usize,
    pub stable_levels: usize,
}

impl Default for LatticeConfig {
    fn default() -> Self {
        Self {
            y_points: 512,
            t_points: 64,
            derivative_cap: 1e12,
            inf_floor: -1e12,
            max_levels: 200,
            stable_levels: 8,
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Reduce {
    Max,
    Min,
}

impl Reduce {
    fn identity(self) -> f64 {
        match self {
            Reduce::Max => f64::NEG_INFINITY,
            Reduce::Min => f64::INFINITY,
        }
    }

    fn pick(self, a: f64, b: f64) -> f64 {
        // NaN poisons toward the failing side.
        match self {
            Reduce::Max if a.is_nan() || b.is_nan() => f64::INFINITY,
            Reduce::Min if a.is_nan() || b.is_nan() => f64::NEG_INFINITY,
            Reduce::Max => a.max(b),
            Reduce::Min => a.min(b),
        }
    }

    fn improves(self, new: f64, old: f64) -> bool {
        let tol = 1e-9 * old.abs().max(1e-300);
        match self {
            Reduce::Max => new > old + tol,
            Reduce::Min => new < old - tol,
        }
    }
}

fn time_lattice(t_max: f64, m: usize) -> Vec<f64> {
    if t_max <= 0.0 || m < 2 {
        return vec![0.0];
    }
    (0..m).map(|k| t_max * k as f64 / (m - 1) as f64).collect()
}

impl LatticeConfig {
    fn check(&self) -> Result<()> {
        if self.y_points < 2 || self.t_points < 1 || self.max_levels == 0 {
            return Err(invalid("lattice", "needs y_points ≥ 2, t_points ≥ 1, max_levels ≥ 1"));
        }
        Ok(())
    }

    /// Extremum of `g(t, y)` for `y` in `[lo, hi]`, mirrored to `−y` when `mirror`.
    fn band(&self, g: &(dyn Fn(f64, f64) -> f64 + Sync), ts: &[f64], lo: f64, hi: f64, mirror: bool, r: Reduce) -> f64 {
        let m = self.y_points;
        ts.par_iter()
            .map(|&t| {
                let mut acc = r.identity();
                for k in 0..m {
                    let y = lo + (hi - lo) * k as f64 / (m - 1) as f64;
                    acc = r.pick(acc, g(t, y));
                    if mirror {
                        acc = r.pick(acc, g(t, -y));
                    }
                }
                acc
            })
            .reduce(|| r.identity(), |a, b| r.pick(a, b))
    }

    /// Extremum over `(0, top]` by dyadic descent, stopping at stabilisation or the cap.
    fn descend(&self, g: &(dyn Fn(f64, f64) -> f64 + Sync), ts: &[f64], top: f64, mirror: bool, r: Reduce) -> f64 {
        let beyond = |v: f64| match r {
            Reduce::Max => v > self.derivative_cap,
            Reduce::Min => v < self.inf_floor,
        };
        let mut acc = r.identity();
        let mut last_change = 0;
        for level in 0..self.max_levels {
            let hi = top * 0.5f64.powi(level as i32);
            let s = self.band(g, ts, 0.5 * hi, hi, mirror, r);
            if beyond(s) {
                return match r {
                    Reduce::Max => f64::INFINITY,
                    Reduce::Min => f64::NEG_INFINITY,
                };
            }
            if level == 0 || r.improves(s, acc) {
                last_change = level;
            }
            acc = r.pick(acc, s);
            if level - last_change >= self.stable_levels {
                break;
            }
        }
        acc
    }

    /// Extremum over `|y| ≤ top` restricted to `domain`, including `y = 0` where admissible.
    fn over_ball(&self, f: &ScalarFn, domain: Domain, ts: &[f64], top: f64, r: Reduce) -> f64 {
        let g = |t: f64, y: f64| f(t, y);
        let mut acc = self.descend(&g, ts, top, domain == Domain::AllReals, r);
        if acc.is_infinite() {
            return acc;
        }
        for &t in ts {
            let at_zero = match domain {
                Domain::Positive => limit_at_zero(|y| f(t, y)),
                _ => Some(f(t, 0.0)),
            };
            if let Some(v) = at_zero {
                acc = r.pick(acc, v);
            }
        }
        acc
    }

    fn sup_abs(&self, f: &ScalarFn, domain: Domain, ts: &[f64], top: f64) -> f64 {
        let abs: ScalarFn = {
            let f = f.clone();
            std::sync::Arc::new(move |t, y| f(t, y).abs())
        };
        let s = self.over_ball(&abs, domain, ts, top, Reduce::Max);
        if s > self.derivative_cap {
            f64::INFINITY
        } else {
            s
        }
    }

    /// `L̂_n`: sup of `|∂_yψ|` over `t ∈ [0, t_max]`, `|y| ≤ n·K_δ` within the domain.
    pub fn local_lipschitz(&self, map: &PointwiseMap, space: &SpaceConfig, n: f64, t_max: f64) -> Result<f64> {
        self.check()?;
        if !(n > 0.0) {
            return Err(invalid("n", format!("must be positive, got {n}")));
        }
        let ts = time_lattice(t_max, self.t_points);
        Ok(self.sup_abs(map.d_psi_dy_fn(), map.domain(), &ts, n * space.k_delta()))
    }

    /// All constants of the local Lipschitz bound for the lifted map on the ball of radius `n`.
    pub fn lipschitz_bound(&self, map: &PointwiseMap, space: &SpaceConfig, n: f64, t_max: f64) -> Result<LipschitzBound> {
        let d_n = self.local_lipschitz(map, space, n, t_max)?;
        let d2 = map.d2_psi_dy2_fn().ok_or_else(|| {
            Error::Capability(format!("`{}` has no second derivative", map.name()))
        })?;
        let ts = time_lattice(t_max, self.t_points);
        let d_tilde = self.sup_abs(d2, map.domain(), &ts, n * space.k_delta());
        let k = space.k_delta();
        let constant = (k * k * d_n * d_n + 2.0 * d_n * d_n + 2.0 * k * k * d_tilde * d_tilde * n * n).sqrt();
        Ok(LipschitzBound {
            n,
            radius: n * k,
            d_n,
            c_tilde: d_n,
            d_tilde,
            constant,
        })
    }

    pub fn linear_growth(&self, map: &PointwiseMap, t_max: f64) -> Result<GrowthEstimate> {
        self.check()?;
        let ts = time_lattice(t_max, self.t_points);
        let psi = map.psi_fn().clone();
        let ratio: ScalarFn = std::sync::Arc::new(move |t, y: f64| psi(t, y).abs() / (1.0 + y.abs()));
        let mirror = map.domain() == Domain::AllReals;
        let inner_g = self.over_ball(&ratio, map.domain(), &ts, 1.0, Reduce::Max);
        let inner_d = self.sup_abs(map.d_psi_dy_fn(), map.domain(), &ts, 1.0);
        let dabs = {
            let d = map.d_psi_dy_fn().clone();
            move |t: f64, y: f64| d(t, y).abs()
        };
        let mut g = inner_g;
        let mut d = inner_d;
        let mut table = vec![GrowthRow { radius: 1.0, ratio_sup: g, deriv_sup: d }];
        for k in 1..=GROWTH_DOUBLINGS {
            let hi = 2f64.powi(k);
            let lo = 0.5 * hi;
            g = g.max(self.band(&|t, y| ratio(t, y), &ts, lo, hi, mirror, Reduce::Max));
            d = d.max(self.band(&dabs, &ts, lo, hi, mirror, Reduce::Max));
            table.push(GrowthRow { radius: hi, ratio_sup: g, deriv_sup: d });
        }
        let prev = &table[table.len() - 2];
        let last = &table[table.len() - 1];
        let settled = |a: f64, b: f64| a.is_finite() && b.is_finite() && (b - a).abs() <= GROWTH_TOL * a.abs().max(1e-300);
        let verdict = settled(prev.ratio_sup, last.ratio_sup) && settled(prev.deriv_sup, last.deriv_sup);
        Ok(GrowthEstimate {
            g_hat: last.ratio_sup,
            deriv_sup: last.deriv_sup,
            verdict,
            table,
        })
    }

    pub fn positivity_conditions(&self, map: &PointwiseMap, eps: f64, t_max: f64) -> Result<PositivityReport> {
        self.check()?;
        if map.domain() == Domain::AllReals {
            return Err(Error::Domain(format!(
                "positivity conditions need a nonneg or pos domain, `{}` is all_reals",
                map.name()
            )));
        }
        if !(eps > 0.0) {
            return Err(invalid("eps", format!("must be positive, got {eps}")));
        }
        let missing = |what: &str| Error::Capability(format!("`{}` has no {what}", map.name()));
        let dt = map.d_psi_dt_fn().ok_or_else(|| missing("time derivative"))?.clone();
        let dyy = map.d2_psi_dy2_fn().ok_or_else(|| missing("second derivative"))?.clone();
        let psi = map.psi_fn().clone();
        let dy = map.d_psi_dy_fn().clone();
        let ts = time_lattice(t_max, self.t_points);

        // ψ(t, y) > 0 on a wide range of positive y, ψ(t, 0) = 0 where 0 is admissible.
        let positive_min = {
            let psi = psi.clone();
            let mut m = f64::INFINITY;
            for level in -ZERO_SET_TOP..=ZERO_SET_BOTTOM {
                let hi = 2f64.powi(-level);
                m = m.min(self.band(&|t, y| psi(t, y), &ts, 0.5 * hi, hi, false, Reduce::Min));
            }
            m
        };
        let zero_ok = match map.domain() {
            Domain::NonNegative => ts.iter().all(|&t| psi(t, 0.0) == 0.0),
            _ => true,
        };
        let zero_set = positive_min > 0.0 && zero_ok;

        let floor = self.inf_floor;
        let clamp = |v: f64| if v < floor { f64::NEG_INFINITY } else { v };
        let ratio = {
            let psi = psi.clone();
            move |t: f64, y: f64| {
                let v = dt(t, y) / psi(t, y);
                if v.is_finite() { v } else { f64::NEG_INFINITY }
            }
        };
        let inf_dt_over_psi = clamp(self.descend(&ratio, &ts, eps, false, Reduce::Min));
        let inf_dy = clamp(self.descend(&|t, y| dy(t, y), &ts, eps, false, Reduce::Min));
        let inf_psi_dyy = clamp(self.descend(&|t, y| psi(t, y) * dyy(t, y), &ts, eps, false, Reduce::Min));
        let ok = |v: f64| v.is_finite();
        Ok(PositivityReport {
            eps,
            zero_set,
            inf_dt_over_psi,
            inf_dy,
            inf_psi_dyy,
            dt_over_psi_ok: ok(inf_dt_over_psi),
            dy_ok: ok(inf_dy),
            psi_dyy_ok: ok(inf_psi_dyy),
        })
    }

    /// Largest mismatch between analytic derivatives and central differences of `ψ`.
    pub fn derivative_consistency(&self, map: &PointwiseMap, t_max: f64) -> Result<DerivativeCheck> {
        self.check()?;
        let ts = time_lattice(t_max, self.t_points.min(16));
        let ys: Vec<f64> = match map.domain() {
            Domain::AllReals => (0..=256).map(|k| -8.0 + 16.0 * k as f64 / 256.0).collect(),
            _ => {
                let mut v: Vec<f64> = (1..=256).map(|k| 8.0 * k as f64 / 256.0).collect();
                v.extend((1..=12).map(|k| 10f64.powf(-(k as f64) / 4.0)));
                v
            }
        };
        let psi = map.psi_fn();
        let mut worst = DerivativeCheck::default();
        let mut record = |what: &'static str, t: f64, y: f64, exact: f64, fd: f64| {
            let err = (exact - fd).abs() / exact.abs().max(1.0);
            if err > worst.max_rel_err || err.is_nan() {
                worst = DerivativeCheck { max_rel_err: if err.is_nan() { f64::INFINITY } else { err }, t, y, which: what };
            }
        };
        for &t in &ts {
            for &y in &ys {
                let h = 1e-6 * y.abs().clamp(1e-2, 1.0);
                let fd = (psi(t, y + h) - psi(t, y - h)) / (2.0 * h);
                record("d_psi_dy", t, y, (map.d_psi_dy_fn())(t, y), fd);
                if let Some(dt) = map.d_psi_dt_fn() {
                    let k = 1e-6;
                    let fd = if t >= k {
                        (psi(t + k, y) - psi(t - k, y)) / (2.0 * k)
                    } else {
                        (-3.0 * psi(t, y) + 4.0 * psi(t + k, y) - psi(t + 2.0 * k, y)) / (2.0 * k)
                    };
                    record("d_psi_dt", t, y, dt(t, y), fd);
                }
            }
        }
        Ok(worst)
    }
}

const GROWTH_DOUBLINGS: i32 = 10;
const GROWTH_TOL: f64 = 0.05;
const ZERO_SET_TOP: i32 = 10;
const ZERO_SET_BOTTOM: i32 = 40;

/// Constants of the bound `‖Ψ(f1) − Ψ(f2)‖ ≤ L_n ‖f1 − f2‖` for `‖f1‖, ‖f2‖ ≤ n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LipschitzBound {
    pub n: f64,
    /// `n·K_δ`, the sup-norm radius of the ball.
    pub radius: f64,
    /// sup `|∂_yψ|` on the ball, the point-wise Lipschitz constant of `ψ`.
    pub d_n: f64,
    /// Bound on `|∂_yψ(f(x))|`; equal to `d_n` on the same ball.
    pub c_tilde: f64,
    /// sup `|∂_yyψ|`, the Lipschitz constant of `∂_yψ`.
    pub d_tilde: f64,
    /// `L_n = (K_δ² D_n² + 2 C̃_n² + 2 K_δ² D̃_n² n²)^{1/2}`.
    pub constant: f64,
}

impl LipschitzBound {
    /// `L_n / D_n`: the structural factor multiplying the scalar constant.
    pub fn structural_factor(&self) -> f64 {
        self.constant / self.d_n
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GrowthRow {
    pub radius: f64,
    pub ratio_sup: f64,
    pub deriv_sup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthEstimate {
    /// sup `|ψ|/(1+|y|)` at the largest radius.
    pub g_hat: f64,
    pub deriv_sup: f64,
    /// Both suprema moved by at most 5% on the last range doubling.
    pub verdict: bool,
    pub table: Vec<GrowthRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PositivityReport {
    pub eps: f64,
    pub zero_set: bool,
    pub inf_dt_over_psi: f64,
    pub inf_dy: f64,
    pub inf_psi_dyy: f64,
    pub dt_over_psi_ok: bool,
    pub dy_ok: bool,
    pub psi_dyy_ok: bool,
}

impl PositivityReport {
    pub fn all_pass(&self) -> bool {
        self.zero_set && self.dt_over_psi_ok && self.dy_ok && self.psi_dyy_ok
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivativeCheck {
    /// `|exact − fd| / max(|exact|, 1)`.
    pub max_rel_err: f64,
    pub t: f64,
    pub y: f64,
    pub which: &'static str,
}

impl Default for DerivativeCheck {
    fn default() -> Self {
        Self { max_rel_err: 0.0, t: 0.0, y: 0.0, which: "d_psi_dy" }
    }
}

pub fn estimate_local_lipschitz(map: &PointwiseMap, space: &SpaceConfig, n: f64, t_max: f64) -> Result<f64> {
    LatticeConfig::default().local_lipschitz(map, space, n, t_max)
}

pub fn lipschitz_bound(map: &PointwiseMap, space: &SpaceConfig, n: f64, t_max: f64) -> Result<LipschitzBound> {
    LatticeConfig::default().lipschitz_bound(map, space, n, t_max)
}

pub fn estimate_linear_growth(map: &PointwiseMap, t_max: f64) -> Result<GrowthEstimate> {
    LatticeConfig::default().linear_growth(map, t_max)
}

pub fn check_positivity_conditions(map: &PointwiseMap, eps: f64, t_max: f64) -> Result<PositivityReport> {
    LatticeConfig::default().positivity_conditions(map, eps, t_max)
}

pub fn check_derivative_consistency(map: &PointwiseMap, t_max: f64) -> Result<DerivativeCheck> {
    LatticeConfig::default().derivative_consistency(map, t_max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointwise::{builtin, make_cev, make_cev_tilde, make_exp_form, make_separable, TimeFactor};
    use approx::assert_relative_eq;
    use std::collections::BTreeMap;

    fn named(name: &str) -> PointwiseMap {
        builtin(name, &BTreeMap::new()).unwrap().0
    }

    fn unit_space() -> std::sync::Arc<SpaceConfig> {
        SpaceConfig::with_default_horizon(1.0, 101).unwrap()
    }

    #[test]
    fn lipschitz_of_identity_and_square() {
        let cfg = unit_space();
        assert_eq!(estimate_local_lipschitz(&named("identity"), &cfg, 3.0, 1.0).unwrap(), 1.0);
        let sq = estimate_local_lipschitz(&named("square"), &cfg, 1.0, 1.0).unwrap();
        assert_relative_eq!(sq, 2.0 * 2f64.sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn lipschitz_of_sqrt_is_infinite() {
        let cfg = unit_space();
        for n in [0.5, 1.0, 4.0] {
            assert_eq!(estimate_local_lipschitz(&named("sqrt"), &cfg, n, 1.0).unwrap(), f64::INFINITY);
        }
    }

    #[test]
    fn cev_tilde_lipschitz_is_finite_and_refinement_stable() {
        let cfg = unit_space();
        let m = make_cev_tilde(1.5, 0.05).unwrap();
        let coarse = LatticeConfig::default().local_lipschitz(&m, &cfg, 2.0, 1.0).unwrap();
        let fine = LatticeConfig { y_points: 2048, ..Default::default() }
            .local_lipschitz(&m, &cfg, 2.0, 1.0)
            .unwrap();
        assert!(coarse.is_finite());
        assert_relative_eq!(coarse, fine, max_relative = 1e-3);
    }

    #[test]
    fn growth_verdicts() {
        let id = estimate_linear_growth(&named("identity"), 1.0).unwrap();
        assert!(id.verdict);
        assert!((id.g_hat - 1.0).abs() < 1e-2);
        assert_eq!(id.deriv_sup, 1.0);
        assert!(!estimate_linear_growth(&named("square"), 1.0).unwrap().verdict);
        let s = estimate_linear_growth(&named("sin"), 1.0).unwrap();
        assert!(s.verdict);
        assert_eq!(s.deriv_sup, 1.0);
        let mut p = BTreeMap::new();
        p.insert("value".to_string(), 0.2);
        let sigma = builtin("constant", &p).unwrap().0.restrict(Domain::Positive).unwrap();
        assert!(estimate_linear_growth(&sigma, 1.0).unwrap().verdict);
        let geometric = make_exp_form(sigma).unwrap();
        assert!(estimate_linear_growth(&geometric, 1.0).unwrap().verdict);
    }

    #[test]
    fn positivity_for_cev() {
        let one = TimeFactor::constant(1.0).unwrap();
        let r = check_positivity_conditions(&make_cev(2.0, one.clone()).unwrap(), 0.1, 1.0).unwrap();
        assert!(r.all_pass(), "{r:?}");
        assert!(r.inf_dy.abs() < 1e-12);
        assert!(r.inf_psi_dyy.abs() < 1e-12);
        assert_eq!(r.inf_dt_over_psi, 0.0);
        let lin = check_positivity_conditions(&make_cev(1.0, one).unwrap(), 0.1, 1.0).unwrap();
        assert!(lin.all_pass());
        assert_eq!(lin.inf_dy, 1.0);
    }

    #[test]
    fn shifted_map_fails_zero_set() {
        let shifted = named("shifted").restrict(Domain::NonNegative).unwrap();
        let r = check_positivity_conditions(&shifted, 0.1, 1.0).unwrap();
        assert!(!r.zero_set);
        assert!(!r.all_pass());
    }

    #[test]
    fn positivity_preconditions() {
        assert!(matches!(check_positivity_conditions(&named("identity"), 0.1, 1.0), Err(Error::Domain(_))));
        let bare = PointwiseMap::new("bare", Domain::NonNegative, |_, y| y, |_, _| 1.0);
        assert!(matches!(check_positivity_conditions(&bare, 0.1, 1.0), Err(Error::Capability(_))));
    }

    #[test]
    fn builtin_derivatives_are_consistent() {
        let mut maps: Vec<PointwiseMap> = crate::pointwise::builtin_names()
            .iter()
            .filter_map(|n| {
                let mut p: BTreeMap<String, f64> = BTreeMap::new();
                p.insert("value".into(), 0.7);
                p.insert("scale".into(), -1.3);
                p.insert("kappa".into(), 2.0);
                p.insert("theta".into(), 0.4);
                let need: &[&str] = match *n {
                    "constant" => &["value"],
                    "linear" => &["scale"],
                    "mean_reverting" => &["kappa", "theta"],
                    _ => &[],
                };
                p.retain(|k, _| need.contains(&k.as_str()));
                builtin(n, &p).ok().map(|(m, _)| m)
            })
            .collect();
        let decay = TimeFactor::exp_decay(0.3, 0.8).unwrap();
        maps.push(make_cev(2.0, decay.clone()).unwrap());
        maps.push(make_cev(1.5, decay.clone()).unwrap());
        maps.push(make_cev_tilde(1.5, 0.1).unwrap());
        maps.push(make_separable(decay, named("sin")));
        maps.push(make_exp_form(named("exp_decay").restrict(Domain::NonNegative).unwrap()).unwrap());
        for m in &maps {
            let c = check_derivative_consistency(m, 2.0).unwrap();
            assert!(c.max_rel_err <= 1e-4, "{}: {c:?}", m.name());
        }
    }
}
