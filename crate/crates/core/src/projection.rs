//! Scalar SDE `dF(t,T) = a(t,F)dt + c_t(T) ψ(t,F) dW_t` for a fixed delivery `T`, and its
//! comparison with forwards read off simulated curves.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::noise::{Aggregated, CounterStream, CovarianceOperator, NormalSource, StreamTag};
use crate::pointwise::CoefficientSpec;
use crate::solver::{fit_order, mean_se, simulate_path_with, PathEnsemble, SimConfig};
use crate::space::CurveGrid;

#[derive(Debug, Clone)]
pub struct ProjectionSpec {
    pub maturity: f64,
    pub coeffs: CoefficientSpec,
    pub q: CovarianceOperator,
    pub f0: f64,
    pub absorb_at_zero: bool,
}

impl ProjectionSpec {
    pub fn new(maturity: f64, coeffs: CoefficientSpec, q: CovarianceOperator, f0: f64, absorb_at_zero: bool) -> Result<Self> {
        if !(maturity > 0.0) {
            return Err(invalid("maturity", format!("must be positive, got {maturity}")));
        }
        if !f0.is_finite() {
            return Err(invalid("f0", "must be finite"));
        }
        Ok(Self { maturity, coeffs, q, f0, absorb_at_zero })
    }

    /// Reads `F(0, T) = g0(T)` off an initial curve.
    pub fn from_curve(maturity: f64, coeffs: CoefficientSpec, q: CovarianceOperator, g0: &CurveGrid, absorb_at_zero: bool) -> Result<Self> {
        let f0 = g0.delta_eval(maturity)?;
        Self::new(maturity, coeffs, q, f0, absorb_at_zero)
    }

    fn vanishes_at_zero(&self, t: f64) -> bool {
        matches!(self.coeffs.diffusion.value(t, 0.0), Ok(v) if v == 0.0)
    }

    /// Scalar normal driving `F(·, T)` at time `t`, built from the curve normals `z`.
    pub fn coupled_normal(&self, t: f64, z: &[f64]) -> Result<f64> {
        let x = self.maturity - t;
        let e = self.q.eval_basis(x)?;
        let c = self.q.c_coeff(t, self.maturity)?;
        if c == 0.0 {
            return Err(Error::Coupling(format!("c_t(T) vanishes at T − t = {x}")));
        }
        let s: f64 = self.q.eigenvalues().iter().zip(&e).zip(z).map(|((l, e), z)| l.sqrt() * e * z).sum();
        Ok(s / c)
    }
}

/// Euler–Maruyama step `F + a dt + c_t(T) ψ √dt z`, with absorption at zero when enabled and
/// `ψ(t, 0) = 0`.
pub fn sde_step(f: f64, t: f64, spec: &ProjectionSpec, dt: f64, z: f64) -> Result<f64> {
    if spec.absorb_at_zero && f == 0.0 && spec.vanishes_at_zero(t) {
        return Ok(0.0);
    }
    let a = spec.coeffs.drift.value(t, f)?;
    let psi = spec.coeffs.diffusion.value(t, f)?;
    let c = spec.q.c_coeff(t, spec.maturity)?;
    let next = f + a * dt + c * psi * dt.sqrt() * z;
    if spec.absorb_at_zero && next <= 0.0 && spec.vanishes_at_zero(t + dt) {
        return Ok(0.0);
    }
    if !next.is_finite() {
        return Err(Error::Range(format!("F is not finite after the step at t = {t}")));
    }
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// Scalar normals from the path's own scalar stream.
    Independent,
    /// Scalar normals assembled from the curve normals the SPDE path of the same id uses.
    Coupled,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FPath {
    pub path_id: u64,
    /// `F(t_k, T)` for `k = 0, 1, …` while `t_k ≤ min(T, horizon)`.
    pub values: Vec<f64>,
    pub stopped_at: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FEnsemble {
    pub maturity: f64,
    pub dt: f64,
    pub mode: NoiseMode,
    pub paths: Vec<FPath>,
}

impl FEnsemble {
    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }
}

fn last_step(spec: &ProjectionSpec, sim: &SimConfig) -> Result<usize> {
    let n = sim.n_steps()?;
    let to_maturity = ((spec.maturity / sim.dt) + 1e-9).floor() as usize;
    Ok(n.min(to_maturity))
}

fn simulate_f_path(spec: &ProjectionSpec, sim: &SimConfig, mode: NoiseMode, id: u64, source: &dyn NormalSource) -> FPath {
    let steps = match last_step(spec, sim) {
        Ok(s) => s,
        Err(e) => {
            return FPath { path_id: id, values: vec![spec.f0], stopped_at: Some(0.0), error: Some(e.to_string()) };
        }
    };
    let mut values = Vec::with_capacity(steps + 1);
    values.push(spec.f0);
    let mut f = spec.f0;
    let mut zc = vec![0.0; spec.q.len()];
    let mut zs = [0.0];
    for k in 0..steps {
        let t = sim.time(k);
        let z = match mode {
            NoiseMode::Independent => {
                source.fill(k as u64, StreamTag::Scalar, &mut zs);
                Ok(zs[0])
            }
            NoiseMode::Coupled => {
                source.fill(k as u64, StreamTag::Curve, &mut zc);
                spec.coupled_normal(t, &zc)
            }
        };
        match z.and_then(|z| sde_step(f, t, spec, sim.dt, z)) {
            Ok(next) => {
                f = next;
                values.push(f);
            }
            Err(e) => {
                return FPath { path_id: id, values, stopped_at: Some(t), error: Some(e.to_string()) };
            }
        }
    }
    FPath { path_id: id, values, stopped_at: None, error: None }
}

pub fn simulate_f(spec: &ProjectionSpec, sim: &SimConfig, mode: NoiseMode) -> Result<FEnsemble> {
    let seed = sim.master_seed;
    simulate_f_with(spec, sim, mode, |id| CounterStream::new(seed, id))
}

pub fn simulate_f_with<S, F>(spec: &ProjectionSpec, sim: &SimConfig, mode: NoiseMode, source: F) -> Result<FEnsemble>
where
    S: NormalSource,
    F: Fn(u64) -> S + Sync,
{
    sim.validate()?;
    last_step(spec, sim)?;
    let paths = (0..sim.n_paths as u64)
        .into_par_iter()
        .map(|id| simulate_f_path(spec, sim, mode, id, &source(id)))
        .collect();
    Ok(FEnsemble { maturity: spec.maturity, dt: sim.dt, mode, paths })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentComparison {
    pub n: usize,
    pub mean_sde: f64,
    pub mean_sde_se: f64,
    pub mean_spde: f64,
    pub mean_spde_se: f64,
    pub var_sde: f64,
    pub var_sde_se: f64,
    pub var_spde: f64,
    pub var_spde_se: f64,
    /// Means differ by at most three combined standard errors.
    pub means_agree: bool,
    pub variances_agree: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProjectionReport {
    pub maturity: f64,
    pub dt: f64,
    pub n_paths: usize,
    /// Paths where both routes ran to the end.
    pub n_compared: usize,
    /// `sup_t |g_t(T − t) − F(t)|` per compared path.
    pub pathwise_sup: Vec<f64>,
    pub pathwise_max: f64,
    pub pathwise_mean: f64,
    pub terminal: MomentComparison,
}

pub struct ProjectionComparison {
    pub report: ProjectionReport,
    pub sde: FEnsemble,
}

/// Sample variance and the standard error of that estimate.
pub fn variance_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return (f64::NAN, f64::NAN);
    }
    let m = xs.iter().sum::<f64>() / n;
    let m2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    let var = m2 * n / (n - 1.0);
    (var, ((m4 - m2 * m2).max(0.0) / n).sqrt())
}

fn moments(sde: &[f64], spde: &[f64]) -> MomentComparison {
    let (ma, sa) = mean_se(sde);
    let (mb, sb) = mean_se(spde);
    let (va, vsa) = variance_se(sde);
    let (vb, vsb) = variance_se(spde);
    let agree = |x: f64, y: f64, s1: f64, s2: f64| (x - y).abs() <= 3.0 * (s1 * s1 + s2 * s2).sqrt() || x == y;
    MomentComparison {
        n: sde.len(),
        mean_sde: ma,
        mean_sde_se: sa,
        mean_spde: mb,
        mean_spde_se: sb,
        var_sde: va,
        var_sde_se: vsa,
        var_spde: vb,
        var_spde_se: vsb,
        means_agree: agree(ma, mb, sa, sb),
        variances_agree: agree(va, vb, vsa, vsb),
    }
}

fn check_coupling(ens: &PathEnsemble, spec: &ProjectionSpec, sim: &SimConfig) -> Result<usize> {
    let space = ens.initial.config();
    if **space != **spec.q.config() {
        return Err(Error::Coupling("curve ensemble and projection use different spaces".into()));
    }
    if space.node_index(spec.maturity).is_none() {
        return Err(Error::Coupling(format!("maturity {} is not a grid node", spec.maturity)));
    }
    if space.node_multiple(sim.dt).is_none() {
        return Err(Error::Coupling(format!("dt = {} is not a multiple of the grid spacing", sim.dt)));
    }
    if spec.maturity > space.x_max() {
        return Err(Error::Coupling(format!("maturity {} lies beyond the grid", spec.maturity)));
    }
    if ens.sim.master_seed != sim.master_seed || ens.sim.dt != sim.dt || ens.sim.n_paths != sim.n_paths || ens.sim.horizon != sim.horizon {
        return Err(Error::Coupling("curve ensemble was run with a different seed, dt, horizon or path count".into()));
    }
    let g0_t = ens.initial.delta_eval(spec.maturity)?;
    if g0_t != spec.f0 {
        return Err(Error::Coupling(format!("F0 = {} differs from g0(T) = {g0_t}", spec.f0)));
    }
    ens.sim
        .track_maturities
        .iter()
        .position(|&m| m == spec.maturity)
        .ok_or_else(|| Error::Coupling(format!("curve ensemble does not track maturity {}", spec.maturity)))
}

/// Pathwise and distributional comparison of `g_t(T − t)` with the coupled scalar SDE.
pub fn compare_projection(ens: &PathEnsemble, spec: &ProjectionSpec, sim: &SimConfig) -> Result<ProjectionComparison> {
    let slot = check_coupling(ens, spec, sim)?;
    let sde = simulate_f(spec, sim, NoiseMode::Coupled)?;
    let mut sup = Vec::new();
    let mut term_sde = Vec::new();
    let mut term_spde = Vec::new();
    for (p, f) in ens.paths.iter().zip(&sde.paths) {
        if !p.survived() || f.stopped_at.is_some() {
            continue;
        }
        let proj = &p.tracked[slot].values;
        let n = proj.len().min(f.values.len());
        let s = proj[..n].iter().zip(&f.values[..n]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        sup.push(s);
        term_spde.push(proj[n - 1]);
        term_sde.push(f.values[n - 1]);
    }
    let (pm, _) = mean_se(&sup);
    let report = ProjectionReport {
        maturity: spec.maturity,
        dt: sim.dt,
        n_paths: sim.n_paths,
        n_compared: sup.len(),
        pathwise_max: sup.iter().cloned().fold(0.0, f64::max),
        pathwise_mean: pm,
        pathwise_sup: sup,
        terminal: moments(&term_sde, &term_spde),
    };
    Ok(ProjectionComparison { report, sde })
}

/// Reference solution for the dt-halving table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Reference {
    /// `F0 exp(σ W_t − σ² t / 2)` driven by the finest coupled scalar normals; exact when
    /// the drift vanishes and `c_t(T) ψ(t, F) = σ F`.
    ExactGbm { sigma: f64 },
    /// The projected curve path at the finest step.
    FinestLevel,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    pub dt: f64,
    /// Mean over paths of `sup_k |g_{t_k}(T − t_k) − ref(t_k)|`.
    pub error_vs_reference: f64,
    pub se: f64,
    /// Mean over paths of `sup_k |g_{t_k}(T − t_k) − F_k|` against the coupled SDE.
    pub spde_vs_sde: f64,
    pub n_compared: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceTable {
    pub maturity: f64,
    pub reference: Reference,
    pub rows: Vec<ConvergenceRow>,
    pub fitted_order: Option<f64>,
}

/// Sweeps `dt = m · sim.dt` for `m ∈ factors` on one Brownian path per id.
pub fn projection_convergence(
    g0: &CurveGrid,
    spec: &ProjectionSpec,
    sim: &SimConfig,
    factors: &[u64],
    reference: Reference,
) -> Result<ConvergenceTable> {
    let space = g0.config();
    if space.node_index(spec.maturity).is_none() {
        return Err(Error::Coupling(format!("maturity {} is not a grid node", spec.maturity)));
    }
    for &m in factors {
        if m == 0 || space.node_multiple(sim.dt * m as f64).is_none() {
            return Err(Error::Coupling(format!("dt = {} is not a multiple of the grid spacing", sim.dt * m as f64)));
        }
    }
    let fine_steps = last_step(spec, sim)?;
    let seed = sim.master_seed;

    // Finest-level reference trajectories, indexed by fine step.
    let fine_ref: Vec<Option<Vec<f64>>> = match reference {
        Reference::ExactGbm { sigma } => (0..sim.n_paths as u64)
            .into_par_iter()
            .map(|id| -> Result<Option<Vec<f64>>> {
                let src = CounterStream::new(seed, id);
                let mut z = vec![0.0; spec.q.len()];
                let mut w = 0.0;
                let mut out = Vec::with_capacity(fine_steps + 1);
                out.push(spec.f0);
                for k in 0..fine_steps {
                    src.fill(k as u64, StreamTag::Curve, &mut z);
                    w += sim.dt.sqrt() * spec.coupled_normal(sim.time(k), &z)?;
                    let t = sim.time(k + 1);
                    out.push(spec.f0 * (sigma * w - 0.5 * sigma * sigma * t).exp());
                }
                Ok(Some(out))
            })
            .collect::<Result<_>>()?,
        Reference::FinestLevel => {
            let ens = level_projection(g0, spec, sim, 1)?;
            ens.into_iter().map(|(p, _)| p).collect()
        }
    };

    let mut rows = Vec::with_capacity(factors.len());
    for &m in factors {
        let lvl = level_projection(g0, spec, sim, m)?;
        let mut errs = Vec::new();
        let mut coupling = Vec::new();
        for ((proj, sde), r) in lvl.iter().zip(&fine_ref) {
            let (Some(proj), Some(r)) = (proj, r) else { continue };
            let e = proj.iter().enumerate().map(|(k, v)| (v - r[k * m as usize]).abs()).fold(0.0, f64::max);
            errs.push(e);
            if let Some(sde) = sde {
                let c = proj.iter().zip(sde).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                coupling.push(c);
            }
        }
        let (mean, se) = mean_se(&errs);
        rows.push(ConvergenceRow {
            dt: sim.dt * m as f64,
            error_vs_reference: mean,
            se,
            spde_vs_sde: mean_se(&coupling).0,
            n_compared: errs.len(),
        });
    }
    let fit: Vec<&ConvergenceRow> = rows
        .iter()
        .filter(|r| !(reference == Reference::FinestLevel && r.dt == sim.dt))
        .collect();
    let dts: Vec<f64> = fit.iter().map(|r| r.dt).collect();
    let errs: Vec<f64> = fit.iter().map(|r| r.error_vs_reference).collect();
    Ok(ConvergenceTable {
        maturity: spec.maturity,
        reference,
        fitted_order: fit_order(&dts, &errs),
        rows,
    })
}

type LevelPaths = Vec<(Option<Vec<f64>>, Option<Vec<f64>>)>;

/// Projected curve paths and coupled SDE paths at step `m · sim.dt`.
fn level_projection(g0: &CurveGrid, spec: &ProjectionSpec, sim: &SimConfig, m: u64) -> Result<LevelPaths> {
    let mut lsim = sim.clone();
    lsim.dt = sim.dt * m as f64;
    lsim.horizon = sim.horizon.min(spec.maturity);
    lsim.snapshot_stride = usize::MAX;
    lsim.positivity_monitor = false;
    lsim.record_increments = false;
    lsim.track_maturities = vec![spec.maturity];
    lsim.validate()?;
    let seed = sim.master_seed;
    (0..sim.n_paths as u64)
        .into_par_iter()
        .map(|id| {
            let src = Aggregated::new(CounterStream::new(seed, id), m)?;
            let p = simulate_path_with(g0, &spec.coeffs, &spec.q, &lsim, id, &src)?;
            let f = simulate_f_path(spec, &lsim, NoiseMode::Coupled, id, &src);
            let proj = p.survived().then(|| p.tracked[0].values.clone());
            let sde = f.stopped_at.is_none().then_some(f.values);
            Ok((proj, sde))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorrelationEstimate {
    pub analytic: f64,
    pub empirical: f64,
    /// Large-sample standard error `(1 − ρ̂²)/√n`.
    pub se: f64,
    pub samples: usize,
}

/// Empirical correlation of the coupled scalar increments for maturities `T1`, `T2` at `t`.
pub fn increment_correlation(q: &CovarianceOperator, t: f64, t1: f64, t2: f64, samples: usize, seed: u64) -> Result<CorrelationEstimate> {
    if samples < 3 {
        return Err(invalid("samples", "need at least 3 samples"));
    }
    let analytic = q.correlation(t, t1, t2)?;
    let e1 = q.eval_basis(t1 - t)?;
    let e2 = q.eval_basis(t2 - t)?;
    let c1 = q.c_coeff(t, t1)?;
    let c2 = q.c_coeff(t, t2)?;
    let src = CounterStream::new(seed, 0);
    let mut z = vec![0.0; q.len()];
    let (mut s1, mut s2, mut s11, mut s22, mut s12) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for k in 0..samples {
        src.fill(k as u64, StreamTag::Curve, &mut z);
        let mut a = 0.0;
        let mut b = 0.0;
        for j in 0..q.len() {
            let s = q.eigenvalues()[j].sqrt() * z[j];
            a += s * e1[j];
            b += s * e2[j];
        }
        a /= c1;
        b /= c2;
        s1 += a;
        s2 += b;
        s11 += a * a;
        s22 += b * b;
        s12 += a * b;
    }
    let n = samples as f64;
    let cov = s12 / n - s1 * s2 / (n * n);
    let v1 = s11 / n - s1 * s1 / (n * n);
    let v2 = s22 / n - s2 * s2 / (n * n);
    let rho = cov / (v1 * v2).sqrt();
    Ok(CorrelationEstimate {
        analytic,
        empirical: rho,
        se: (1.0 - rho * rho) / n.sqrt(),
        samples,
    })
}
