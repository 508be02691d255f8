//! Exponential-Euler stepping of the mild formulation
//! `g_{t+dt} = S_dt (g_t + α(t, g_t) dt + σ(t, g_t) ΔW)` with `σ(t, g) = M_{Ψ(t, g)}`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::noise::{Aggregated, CounterStream, CovarianceOperator, NormalSource, StreamTag};
use crate::operators::{exp_map, log_map, mult_apply};
use crate::pointwise::CoefficientSpec;
use crate::space::{CurveGrid, SpaceConfig};

pub const DEFAULT_BLOWUP_NORM: f64 = 1e6;

/// Drift curve `α(t, g)` and diffusion kernel `h` with `σ(t, g) = M_h`.
pub trait CurveCoefficients: Sync {
    fn drift(&self, t: f64, g: &CurveGrid) -> Result<CurveGrid>;
    fn diffusion_kernel(&self, t: f64, g: &CurveGrid) -> Result<CurveGrid>;
}

impl CurveCoefficients for CoefficientSpec {
    fn drift(&self, t: f64, g: &CurveGrid) -> Result<CurveGrid> {
        self.drift.lift(t, g)
    }

    fn diffusion_kernel(&self, t: f64, g: &CurveGrid) -> Result<CurveGrid> {
        self.diffusion.lift(t, g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub n_paths: usize,
    pub master_seed: u64,
    pub blowup_norm: f64,
    /// Snapshots are kept every `snapshot_stride` steps and at the final step.
    pub snapshot_stride: usize,
    pub positivity_monitor: bool,
    /// Keep the standard normals of every step (needed for path reweighting).
    pub record_increments: bool,
    /// Maturities `T` whose forwards `g_t(T − t)` are recorded at every step with `t ≤ T`.
    pub track_maturities: Vec<f64>,
}

impl SimConfig {
    pub fn new(dt: f64, horizon: f64, n_paths: usize, master_seed: u64) -> Result<Self> {
        let sim = Self {
            dt,
            horizon,
            n_paths,
            master_seed,
            blowup_norm: DEFAULT_BLOWUP_NORM,
            snapshot_stride: 1,
            positivity_monitor: false,
            record_increments: false,
            track_maturities: Vec::new(),
        };
        sim.validate()?;
        Ok(sim)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(invalid("dt", format!("must be positive, got {}", self.dt)));
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(invalid("horizon", format!("must be positive, got {}", self.horizon)));
        }
        if self.n_paths == 0 {
            return Err(invalid("n_paths", "must be at least 1"));
        }
        if !(self.blowup_norm > 0.0) {
            return Err(invalid("blowup_norm", "must be positive"));
        }
        if self.snapshot_stride == 0 {
            return Err(invalid("snapshot_stride", "must be at least 1"));
        }
        if let Some(t) = self.track_maturities.iter().find(|t| !(**t >= 0.0)) {
            return Err(invalid("track_maturities", format!("maturity {t} is negative")));
        }
        self.n_steps().map(|_| ())
    }

    /// `horizon / dt`, which must be an integer to within `1e-12`.
    pub fn n_steps(&self) -> Result<usize> {
        let ratio = self.horizon / self.dt;
        let n = ratio.round();
        if n < 1.0 || (n * self.dt - self.horizon).abs() > 1e-12 * self.horizon.max(1.0) {
            return Err(invalid(
                "dt",
                format!("dt = {} does not divide the horizon {}", self.dt, self.horizon),
            ));
        }
        Ok(n as usize)
    }

    /// Whether shifts by `dt` fall between grid nodes and are interpolated.
    pub fn uses_interpolated_shift(&self, space: &SpaceConfig) -> bool {
        space.node_multiple(self.dt).is_none()
    }

    pub fn time(&self, step: usize) -> f64 {
        step as f64 * self.dt
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Violation {
    pub t: f64,
    /// Index of the smallest offending value; `n_nodes` denotes the tail.
    pub node: usize,
    pub value: f64,
}

/// `F(t_k, T) = g_{t_k}(T − t_k)` for steps `k` with `t_k ≤ T`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaturityTrace {
    pub maturity: f64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    BlowUp { norm: f64 },
    NonFinite,
    StepError(String),
}

#[derive(Debug, Clone)]
pub struct PathResult {
    pub path_id: u64,
    pub dt: f64,
    pub snapshots: Vec<(f64, CurveGrid)>,
    pub steps_completed: usize,
    pub stopped_at: Option<f64>,
    pub stop_reason: Option<StopReason>,
    pub positivity_violations: Vec<Violation>,
    pub tracked: Vec<MaturityTrace>,
    /// Standard normals consumed at each step, when recorded.
    pub increments: Option<Vec<Vec<f64>>>,
    pub rn_log_weight: Option<f64>,
}

impl PathResult {
    pub fn survived(&self) -> bool {
        self.stopped_at.is_none()
    }

    pub fn final_curve(&self) -> Option<&CurveGrid> {
        self.snapshots.last().map(|(_, g)| g)
    }
}

fn smallest_non_positive(g: &CurveGrid) -> Option<(usize, f64)> {
    let mut worst: Option<(usize, f64)> = None;
    let n = g.len();
    for (i, v) in g.values().iter().copied().chain(std::iter::once(g.tail())).enumerate() {
        if v <= 0.0 && worst.is_none_or(|(_, w)| v < w) {
            worst = Some((i.min(n), v));
        }
    }
    worst
}

/// One exponential-Euler step driven by the standard normals `z`.
pub fn step_mild(
    g: &CurveGrid,
    t: f64,
    coeffs: &dyn CurveCoefficients,
    q: &CovarianceOperator,
    dt: f64,
    z: &[f64],
) -> Result<CurveGrid> {
    let drift = coeffs.drift(t, g)?;
    let kernel = coeffs.diffusion_kernel(t, g)?;
    let dw = q.sample_increment(dt, z)?;
    let noise = mult_apply(&kernel, &dw)?;
    let pre = g.lin_comb(1.0, &drift, dt)?.lin_comb(1.0, &noise, 1.0)?;
    if !pre.is_finite() {
        return Err(Error::Range(format!("non-finite curve after the step at t = {t}")));
    }
    pre.shift(dt)
}

/// Simulates one path with the counter stream of `(sim.master_seed, path_id)`.
pub fn simulate_path(
    g0: &CurveGrid,
    coeffs: &dyn CurveCoefficients,
    q: &CovarianceOperator,
    sim: &SimConfig,
    path_id: u64,
) -> Result<PathResult> {
    let source = CounterStream::new(sim.master_seed, path_id);
    simulate_path_with(g0, coeffs, q, sim, path_id, &source)
}

pub fn simulate_path_with(
    g0: &CurveGrid,
    coeffs: &dyn CurveCoefficients,
    q: &CovarianceOperator,
    sim: &SimConfig,
    path_id: u64,
    source: &dyn NormalSource,
) -> Result<PathResult> {
    sim.validate()?;
    if **g0.config() != **q.config() {
        return Err(Error::ConfigMismatch);
    }
    if !g0.is_finite() {
        return Err(invalid("g0", "initial curve must be finite"));
    }
    let n_steps = sim.n_steps()?;
    let snapshot_due = |k: usize| k.is_multiple_of(sim.snapshot_stride) || k == n_steps;

    let mut result = PathResult {
        path_id,
        dt: sim.dt,
        snapshots: Vec::new(),
        steps_completed: 0,
        stopped_at: None,
        stop_reason: None,
        positivity_violations: Vec::new(),
        tracked: sim
            .track_maturities
            .iter()
            .map(|&m| MaturityTrace { maturity: m, values: Vec::new() })
            .collect(),
        increments: sim.record_increments.then(|| Vec::with_capacity(n_steps)),
        rn_log_weight: None,
    };

    let observe = |result: &mut PathResult, k: usize, g: &CurveGrid| -> Result<()> {
        let t = sim.time(k);
        for trace in &mut result.tracked {
            let x = trace.maturity - t;
            if x >= -1e-12 {
                trace.values.push(g.delta_eval(x.max(0.0))?);
            }
        }
        if sim.positivity_monitor {
            if let Some((node, value)) = smallest_non_positive(g) {
                result.positivity_violations.push(Violation { t, node, value });
            }
        }
        if snapshot_due(k) {
            result.snapshots.push((t, g.clone()));
        }
        Ok(())
    };

    let mut g = g0.clone();
    observe(&mut result, 0, &g)?;
    let mut z = vec![0.0; q.len()];
    for k in 0..n_steps {
        let t = sim.time(k);
        source.fill(k as u64, StreamTag::Curve, &mut z);
        let next = match step_mild(&g, t, coeffs, q, sim.dt, &z) {
            Ok(next) => next,
            Err(e) => {
                let reason = match e {
                    Error::Range(_) => StopReason::NonFinite,
                    other => StopReason::StepError(other.to_string()),
                };
                result.stopped_at = Some(t);
                result.stop_reason = Some(reason);
                break;
            }
        };
        if let Some(inc) = result.increments.as_mut() {
            inc.push(z.clone());
        }
        g = next;
        result.steps_completed = k + 1;
        let norm = g.norm();
        if !norm.is_finite() || norm > sim.blowup_norm {
            result.stopped_at = Some(sim.time(k + 1));
            result.stop_reason = Some(if norm.is_finite() {
                StopReason::BlowUp { norm }
            } else {
                StopReason::NonFinite
            });
            break;
        }
        observe(&mut result, k + 1, &g)?;
    }
    Ok(result)
}

/// Independent paths `0..n_paths`, collected in path order.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    pub initial: CurveGrid,
    pub sim: SimConfig,
    pub interpolated_shift: bool,
    pub paths: Vec<PathResult>,
}

impl PathEnsemble {
    pub fn master_seed(&self) -> u64 {
        self.sim.master_seed
    }

    pub fn n_stopped(&self) -> usize {
        self.paths.iter().filter(|p| !p.survived()).count()
    }

    /// Fraction of paths with at least one non-positive value.
    pub fn violation_fraction(&self) -> f64 {
        let bad = self.paths.iter().filter(|p| !p.positivity_violations.is_empty()).count();
        bad as f64 / self.paths.len() as f64
    }

    /// Node-wise mean and standard error of the final curves of surviving paths.
    pub fn final_moments(&self) -> Option<(CurveGrid, CurveGrid)> {
        let finals: Vec<&CurveGrid> = self
            .paths
            .iter()
            .filter(|p| p.survived())
            .filter_map(|p| p.final_curve())
            .collect();
        let n = finals.len();
        if n < 2 {
            return None;
        }
        let cfg = finals[0].config();
        let m = cfg.n_nodes() + 1;
        let mut sum = vec![0.0; m];
        let mut sq = vec![0.0; m];
        for g in &finals {
            for (i, v) in g.values().iter().copied().chain(std::iter::once(g.tail())).enumerate() {
                sum[i] += v;
                sq[i] += v * v;
            }
        }
        let nf = n as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
        let se: Vec<f64> = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| ((s / nf - m * m).max(0.0) * nf / (nf - 1.0) / nf).sqrt())
            .collect();
        let split = |v: Vec<f64>| {
            let tail = v[m - 1];
            CurveGrid::from_parts(cfg, v[..m - 1].to_vec(), tail)
        };
        Some((split(mean), split(se)))
    }
}

pub fn simulate_ensemble(
    g0: &CurveGrid,
    coeffs: &dyn CurveCoefficients,
    q: &CovarianceOperator,
    sim: &SimConfig,
) -> Result<PathEnsemble> {
    let seed = sim.master_seed;
    simulate_ensemble_with(g0, coeffs, q, sim, |id| CounterStream::new(seed, id))
}

/// Ensemble whose path `i` draws its normals from `source(i)`.
pub fn simulate_ensemble_with<S, F>(
    g0: &CurveGrid,
    coeffs: &dyn CurveCoefficients,
    q: &CovarianceOperator,
    sim: &SimConfig,
    source: F,
) -> Result<PathEnsemble>
where
    S: NormalSource,
    F: Fn(u64) -> S + Sync,
{
    sim.validate()?;
    let paths = (0..sim.n_paths as u64)
        .into_par_iter()
        .map(|id| simulate_path_with(g0, coeffs, q, sim, id, &source(id)))
        .collect::<Result<Vec<_>>>()?;
    Ok(PathEnsemble {
        initial: g0.clone(),
        interpolated_shift: sim.uses_interpolated_shift(g0.config()),
        sim: sim.clone(),
        paths,
    })
}

/// Coefficients of `z = Exp g`: drift `z·(α(Log z) + ½Σ(Log z))`, kernel `z·ψ(Log z)` with
/// `Σ(f)(x) = ψ(f(x))² Σ_j ℓ_j e_j(x)²`.
pub struct ExpTransformed<'a> {
    base: &'a CoefficientSpec,
    variance: CurveGrid,
    with_correction: bool,
}

impl<'a> ExpTransformed<'a> {
    pub fn new(base: &'a CoefficientSpec, q: &CovarianceOperator, with_correction: bool) -> Self {
        Self {
            base,
            variance: q.variance_kernel(),
            with_correction,
        }
    }
}

impl CurveCoefficients for ExpTransformed<'_> {
    fn drift(&self, t: f64, z: &CurveGrid) -> Result<CurveGrid> {
        let f = log_map(z)?;
        let mut inner = self.base.drift.lift(t, &f)?;
        if self.with_correction {
            let psi = self.base.diffusion.lift(t, &f)?;
            let sigma = mult_apply(&mult_apply(&psi, &psi)?, &self.variance)?;
            inner = inner.lin_comb(1.0, &sigma, 0.5)?;
        }
        mult_apply(z, &inner)
    }

    fn diffusion_kernel(&self, t: f64, z: &CurveGrid) -> Result<CurveGrid> {
        let f = log_map(z)?;
        mult_apply(z, &self.base.diffusion.lift(t, &f)?)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExpModelLevel {
    pub dt: f64,
    /// Mean over paths of `max_i |e^{g_T(x_i)} − z_T(x_i)|`.
    pub mean_sup_discrepancy: f64,
    pub se: f64,
    pub max_sup_discrepancy: f64,
    /// Paths where either route stopped or `z` left `H_>`.
    pub breakdowns: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExpModelReport {
    pub with_correction: bool,
    pub levels: Vec<ExpModelLevel>,
    /// Least-squares slope of `log error` against `log dt`.
    pub fitted_order: Option<f64>,
}

/// Simulates `g` and `z = Exp g` on shared noise and compares `Exp g_T` with `z_T`.
///
/// `sim.dt` is the finest step; level `m ∈ factors` steps with `m·dt` and aggregates the
/// fine normals so all levels share one Brownian path.
pub fn exp_model_check(
    g0: &CurveGrid,
    coeffs: &CoefficientSpec,
    q: &CovarianceOperator,
    sim: &SimConfig,
    factors: &[u64],
    with_correction: bool,
) -> Result<ExpModelReport> {
    let z0 = exp_map(g0)?;
    let transformed = ExpTransformed::new(coeffs, q, with_correction);
    let mut levels = Vec::with_capacity(factors.len());
    for &m in factors {
        let mut lsim = sim.clone();
        lsim.dt = sim.dt * m as f64;
        lsim.snapshot_stride = usize::MAX;
        lsim.positivity_monitor = false;
        lsim.record_increments = false;
        lsim.track_maturities.clear();
        lsim.validate()?;
        let seed = sim.master_seed;
        let results: Vec<Option<f64>> = (0..sim.n_paths as u64)
            .into_par_iter()
            .map(|id| -> Result<Option<f64>> {
                let src = Aggregated::new(CounterStream::new(seed, id), m)?;
                let g = simulate_path_with(g0, coeffs, q, &lsim, id, &src)?;
                let z = simulate_path_with(&z0, &transformed, q, &lsim, id, &src)?;
                if !g.survived() || !z.survived() {
                    return Ok(None);
                }
                let (Some(gt), Some(zt)) = (g.final_curve(), z.final_curve()) else {
                    return Ok(None);
                };
                let Ok(eg) = exp_map(gt) else { return Ok(None) };
                Ok(Some(eg.max_abs_diff(zt)?))
            })
            .collect::<Result<_>>()?;
        let ok: Vec<f64> = results.iter().flatten().copied().collect();
        let (mean, se) = mean_se(&ok);
        levels.push(ExpModelLevel {
            dt: lsim.dt,
            mean_sup_discrepancy: mean,
            se,
            max_sup_discrepancy: ok.iter().cloned().fold(0.0, f64::max),
            breakdowns: results.len() - ok.len(),
        });
    }
    let dts: Vec<f64> = levels.iter().map(|l| l.dt).collect();
    let errs: Vec<f64> = levels.iter().map(|l| l.mean_sup_discrepancy).collect();
    Ok(ExpModelReport {
        with_correction,
        fitted_order: fit_order(&dts, &errs),
        levels,
    })
}

/// Sample mean and its standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let nf = n as f64;
    let mean = xs.iter().sum::<f64>() / nf;
    if n == 1 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    (mean, (var / nf).sqrt())
}

/// Slope of the least-squares line through `(log dt, log err)`; `None` if fewer than two
/// positive finite errors.
pub fn fit_order(dts: &[f64], errs: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = dts
        .iter()
        .zip(errs)
        .filter(|(d, e)| **d > 0.0 && **e > 0.0 && e.is_finite())
        .map(|(d, e)| (d.ln(), e.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::ZeroSource;
    use crate::pointwise::{builtin, make_cev, PointwiseMap, TimeFactor};
    use approx::assert_relative_eq;
    use std::collections::BTreeMap;
    use std::sync::Arc;

    fn space() -> Arc<SpaceConfig> {
        SpaceConfig::new(1.0, 4.0, 401).unwrap()
    }

    fn one_factor(cfg: &Arc<SpaceConfig>, l: f64) -> CovarianceOperator {
        CovarianceOperator::new(vec![(l, CurveGrid::constant(cfg, 1.0))]).unwrap()
    }

    fn zero_coeffs() -> CoefficientSpec {
        CoefficientSpec::driftless(builtin("zero", &BTreeMap::new()).unwrap().0)
    }

    #[test]
    fn zero_coefficients_transport_exactly() {
        let cfg = space();
        let q = one_factor(&cfg, 0.09);
        let g0 = CurveGrid::from_fn(&cfg, |x| 1.0 - (-x).exp(), Some(1.0)).unwrap();
        let mut sim = SimConfig::new(0.05, 1.0, 1, 3).unwrap();
        sim.track_maturities = vec![1.5];
        let p = simulate_path(&g0, &zero_coeffs(), &q, &sim, 0).unwrap();
        assert_eq!(p.final_curve().unwrap(), &g0.shift(1.0).unwrap());
        let f0 = g0.delta_eval(1.5).unwrap();
        assert_eq!(p.tracked[0].values.len(), 21);
        assert!(p.tracked[0].values.iter().all(|&v| v == f0));
    }

    #[test]
    fn geometric_step_with_forced_normal() {
        let cfg = space();
        let q = one_factor(&cfg, 1.0);
        let one = TimeFactor::constant(0.3).unwrap();
        let coeffs = CoefficientSpec::driftless(make_cev(1.0, one).unwrap());
        let g = CurveGrid::from_fn(&cfg, |x| 1.0 + (-x).exp(), Some(1.0)).unwrap();
        let dt = 0.01;
        let next = step_mild(&g, 0.0, &coeffs, &q, dt, &[0.7]).unwrap();
        for (i, x) in cfg.nodes().enumerate().take(300) {
            let expect = g.delta_eval(x + dt).unwrap() * (1.0 + 0.3 * dt.sqrt() * 0.7);
            assert_relative_eq!(next.values()[i], expect, max_relative = 1e-14);
        }
    }

    #[test]
    fn mean_reverting_fixed_point() {
        let cfg = space();
        let q = one_factor(&cfg, 1.0);
        let mut p = BTreeMap::new();
        p.insert("kappa".to_string(), 2.0);
        p.insert("theta".to_string(), 0.4);
        let drift = builtin("mean_reverting", &p).unwrap().0;
        let coeffs = CoefficientSpec::new(drift, builtin("zero", &BTreeMap::new()).unwrap().0).unwrap();
        let g = CurveGrid::constant(&cfg, 0.4);
        assert_eq!(step_mild(&g, 0.0, &coeffs, &q, 0.01, &[1.0]).unwrap(), g);
    }

    #[test]
    fn blow_up_stops_the_path() {
        let cfg = space();
        let q = one_factor(&cfg, 1.0);
        let sq = builtin("square", &BTreeMap::new()).unwrap().0;
        let coeffs = CoefficientSpec::new(sq.clone(), sq).unwrap();
        let mut sim = SimConfig::new(0.5, 5.0, 1, 0).unwrap();
        sim.blowup_norm = 10.0;
        let p = simulate_path(&CurveGrid::constant(&cfg, 5.0), &coeffs, &q, &sim, 0).unwrap();
        let stop = p.stopped_at.expect("path must stop");
        assert!(p.snapshots.iter().all(|(t, _)| *t < stop));
        assert!(matches!(p.stop_reason, Some(StopReason::BlowUp { .. }) | Some(StopReason::NonFinite)));
    }

    #[test]
    fn domain_error_stops_and_is_reported() {
        let cfg = space();
        let q = one_factor(&cfg, 1.0);
        let root = PointwiseMap::new("root", crate::pointwise::Domain::NonNegative, |_, y: f64| y.sqrt(), |_, y: f64| 0.5 / y.sqrt());
        let coeffs = CoefficientSpec::driftless(root);
        let mut sim = SimConfig::new(0.01, 0.02, 1, 0).unwrap();
        sim.positivity_monitor = true;
        let g0 = CurveGrid::from_fn(&cfg, |x| 1.0 - x, None).unwrap();
        let p = simulate_path(&g0, &coeffs, &q, &sim, 0).unwrap();
        assert_eq!(p.stopped_at, Some(0.0));
        assert!(matches!(p.stop_reason, Some(StopReason::StepError(_))));
        assert_eq!(p.positivity_violations.len(), 1);
    }

    #[test]
    fn ensemble_is_deterministic_and_single_path_matches() {
        let cfg = space();
        let q = CovarianceOperator::default_system(&cfg).unwrap();
        let coeffs = CoefficientSpec::driftless(make_cev(1.0, TimeFactor::constant(0.5).unwrap()).unwrap());
        let g0 = CurveGrid::constant(&cfg, 1.0);
        let sim = SimConfig::new(0.1, 0.5, 4, 11).unwrap();
        let a = simulate_ensemble(&g0, &coeffs, &q, &sim).unwrap();
        let b = simulate_ensemble(&g0, &coeffs, &q, &sim).unwrap();
        for (pa, pb) in a.paths.iter().zip(&b.paths) {
            assert_eq!(pa.snapshots, pb.snapshots);
        }
        let one = simulate_path(&g0, &coeffs, &q, &sim, 0).unwrap();
        assert_eq!(one.snapshots, a.paths[0].snapshots);
        assert_ne!(a.paths[0].snapshots, a.paths[1].snapshots);
    }

    #[test]
    fn zero_noise_exp_model_is_exact() {
        let cfg = space();
        let q = one_factor(&cfg, 1.0);
        let coeffs = zero_coeffs();
        let g0 = CurveGrid::from_fn(&cfg, |x| 0.2 * (-x).exp(), Some(0.0)).unwrap();
        let sim = SimConfig::new(0.1, 1.0, 2, 5).unwrap();
        let rep = exp_model_check(&g0, &coeffs, &q, &sim, &[1, 2], true).unwrap();
        for l in &rep.levels {
            assert_eq!(l.mean_sup_discrepancy, 0.0);
            assert_eq!(l.breakdowns, 0);
        }
        let z = simulate_path_with(&exp_map(&g0).unwrap(), &ExpTransformed::new(&coeffs, &q, true), &q, &sim, 0, &ZeroSource).unwrap();
        assert_eq!(z.final_curve().unwrap(), &exp_map(&g0.shift(1.0).unwrap()).unwrap());
    }

    #[test]
    fn order_fit_recovers_slope() {
        let dts = [0.1, 0.05, 0.025];
        let errs: Vec<f64> = dts.iter().map(|d: &f64| 3.0 * d.powf(0.75)).collect();
        assert_relative_eq!(fit_order(&dts, &errs).unwrap(), 0.75, max_relative = 1e-12);
        assert!(fit_order(&[0.1], &[1.0]).is_none());
    }
}
