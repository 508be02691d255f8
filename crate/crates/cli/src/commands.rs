//! Subcommand implementations.

use std::collections::BTreeMap;
use std::path::Path;

use fwdcurve::girsanov::attach_rn_weights;
use fwdcurve::pointwise::{
    check_derivative_consistency, estimate_linear_growth, estimate_local_lipschitz, lipschitz_bound, CoefficientSpec,
    Domain, Family, GrowthEstimate, LatticeConfig, PointwiseMap,
};
use fwdcurve::projection::{compare_projection, projection_convergence, ConvergenceTable, MomentComparison, ProjectionSpec, Reference};
use fwdcurve::solver::{exp_model_check, mean_se, simulate_ensemble, ExpModelReport, PathEnsemble, StopReason};
use fwdcurve::{Error, SpaceConfig};
use serde::Serialize;

use crate::config::{self, build_map, build_model, Overrides, ReferenceSpec, Resolved};
use crate::output::{write_json, Cell, TableWriter};
use crate::Failure;

fn prepare(path: &Path, o: &Overrides) -> Result<Resolved, Failure> {
    let mut cfg = config::load(path)?;
    cfg.apply(o);
    cfg.resolve()
}

fn out_dir(r: &Resolved) -> Result<&Path, Failure> {
    let dir = r.config.outputs.dir.as_path();
    std::fs::create_dir_all(dir)?;
    Ok(dir)
}

fn setup_err(e: Error) -> Failure {
    match e {
        Error::Coupling(m) => Failure::Coupling(m),
        other => Failure::Config(other.to_string()),
    }
}

#[derive(Serialize)]
struct StopCounts {
    blow_up: usize,
    non_finite: usize,
    step_error: usize,
}

#[derive(Serialize)]
struct PositivitySummary {
    monitored: bool,
    paths_with_violations: usize,
    violation_fraction: f64,
    total_violations: usize,
}

#[derive(Serialize)]
struct NoiseSummary {
    factors: usize,
    trace: f64,
    gram_residual: f64,
}

#[derive(Serialize)]
struct FinalCurve {
    x: Vec<f64>,
    mean: Vec<f64>,
    se: Vec<f64>,
}

#[derive(Serialize)]
struct RnSummary {
    mean_weight: f64,
    se: f64,
}

#[derive(Serialize)]
struct SimulateSummary {
    n_paths: usize,
    n_steps: usize,
    dt: f64,
    horizon: f64,
    interpolated_shift: bool,
    diffusion: String,
    drift: String,
    lipschitz_unsafe: bool,
    survived: usize,
    stopped: usize,
    stop_reasons: StopCounts,
    first_step_errors: Vec<String>,
    positivity: PositivitySummary,
    noise: NoiseSummary,
    final_curve: Option<FinalCurve>,
    rn_weights: Option<RnSummary>,
}

fn summarize(ens: &PathEnsemble, coeffs: &CoefficientSpec, r: &Resolved) -> Result<SimulateSummary, Failure> {
    let mut stops = StopCounts { blow_up: 0, non_finite: 0, step_error: 0 };
    let mut errors = Vec::new();
    for p in &ens.paths {
        match &p.stop_reason {
            Some(StopReason::BlowUp { .. }) => stops.blow_up += 1,
            Some(StopReason::NonFinite) => stops.non_finite += 1,
            Some(StopReason::StepError(m)) => {
                stops.step_error += 1;
                if errors.len() < 5 {
                    errors.push(format!("path {}: {m}", p.path_id));
                }
            }
            None => {}
        }
    }
    let violated = ens.paths.iter().filter(|p| !p.positivity_violations.is_empty()).count();
    let final_curve = ens.final_moments().map(|(m, se)| FinalCurve {
        x: r.space.nodes().collect(),
        mean: m.values().to_vec(),
        se: se.values().to_vec(),
    });
    let rn_weights = r.config.sim.rn_weights.then(|| {
        let w: Vec<f64> = ens.paths.iter().filter_map(|p| p.rn_log_weight).map(f64::exp).collect();
        let (mean_weight, se) = mean_se(&w);
        RnSummary { mean_weight, se }
    });
    Ok(SimulateSummary {
        n_paths: ens.paths.len(),
        n_steps: r.sim.n_steps().map_err(|e| Failure::Config(e.to_string()))?,
        dt: r.sim.dt,
        horizon: r.sim.horizon,
        interpolated_shift: ens.interpolated_shift,
        diffusion: coeffs.diffusion.name().to_string(),
        drift: coeffs.drift.name().to_string(),
        lipschitz_unsafe: coeffs.diffusion.lipschitz_unsafe() || coeffs.drift.lipschitz_unsafe(),
        survived: ens.paths.len() - ens.n_stopped(),
        stopped: ens.n_stopped(),
        stop_reasons: stops,
        first_step_errors: errors,
        positivity: PositivitySummary {
            monitored: r.sim.positivity_monitor,
            paths_with_violations: violated,
            violation_fraction: ens.violation_fraction(),
            total_violations: ens.paths.iter().map(|p| p.positivity_violations.len()).sum(),
        },
        noise: NoiseSummary { factors: r.q.len(), trace: r.q.trace(), gram_residual: r.q.gram_residual() },
        final_curve,
        rn_weights,
    })
}

/// Keeps snapshots at multiples of `stride` steps and the last one.
fn thin_snapshots(ens: &mut PathEnsemble, stride: usize) {
    for p in &mut ens.paths {
        let last = p.snapshots.len().saturating_sub(1);
        let snaps = std::mem::take(&mut p.snapshots);
        p.snapshots = snaps.into_iter().enumerate().filter(|(i, _)| i % stride == 0 || *i == last).map(|(_, s)| s).collect();
        p.increments = None;
    }
}

pub fn simulate(path: &Path, o: &Overrides) -> Result<(), Failure> {
    let mut r = prepare(path, o)?;
    let coeffs = build_model(&mut r.config.model).map_err(setup_err)?;
    let mut sim = r.sim.clone();
    if r.config.sim.rn_weights {
        sim.record_increments = true;
        sim.snapshot_stride = 1;
    }
    let mut ens = simulate_ensemble(&r.g0, &coeffs, &r.q, &sim).map_err(setup_err)?;
    if r.config.sim.rn_weights {
        attach_rn_weights(&mut ens, &coeffs, &r.q).map_err(|e| Failure::Runtime(e.to_string()))?;
        thin_snapshots(&mut ens, r.sim.snapshot_stride);
    }
    let dir = out_dir(&r)?;
    let mut columns = vec!["path_id", "t", "x", "value"];
    if r.config.sim.rn_weights {
        columns.push("rn_log_weight");
    }
    let mut table = TableWriter::create(dir, "curves", &columns, r.config.outputs.format)?;
    let limit = r.config.outputs.max_curve_paths.unwrap_or(usize::MAX);
    for p in ens.paths.iter().take(limit) {
        for (t, g) in &p.snapshots {
            for (x, v) in r.space.nodes().zip(g.values()) {
                let mut row = vec![Cell::Int(p.path_id), Cell::Real(*t), Cell::Real(x), Cell::Real(*v)];
                if let Some(w) = p.rn_log_weight {
                    row.push(Cell::Real(w));
                }
                table.row(&row)?;
            }
        }
    }
    table.finish()?;
    let summary = summarize(&ens, &coeffs, &r)?;
    write_json(dir, "summary.json", &summary)?;
    write_json(dir, "resolved_config.json", &r.config)?;
    if !ens.paths.is_empty() && summary.survived == 0 {
        return Err(Failure::Runtime(format!("all {} paths stopped before the horizon", ens.paths.len())));
    }
    Ok(())
}

#[derive(Serialize)]
struct LipschitzRow {
    n: f64,
    /// Lattice sup of `|∂_yψ|` on `|y| ≤ n K_δ`; `null` when the cap was crossed.
    l_hat: Option<f64>,
    bound: Option<f64>,
    structural_factor: Option<f64>,
    finite: bool,
}

#[derive(Serialize)]
struct MapReport {
    name: String,
    family: Family,
    domain: &'static str,
    lipschitz_unsafe: bool,
    suggestion: Option<String>,
    lipschitz: Vec<LipschitzRow>,
    lipschitz_error: Option<String>,
    growth: Option<GrowthEstimate>,
    growth_error: Option<String>,
    positivity: Option<fwdcurve::pointwise::PositivityReport>,
    positivity_error: Option<String>,
    derivative_max_rel_err: Option<f64>,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn map_report(map: &PointwiseMap, space: &SpaceConfig, check: &config::CheckSection, with_positivity: bool) -> MapReport {
    let lattice = LatticeConfig::default();
    let mut rows = Vec::new();
    let mut lipschitz_error = None;
    for &n in &check.n_values {
        let res = estimate_local_lipschitz(map, space, n, check.t_max)
            .and_then(|l| lipschitz_bound(map, space, n, check.t_max).map(|b| (l, b)));
        match res {
            Ok((l, b)) => rows.push(LipschitzRow {
                n,
                l_hat: finite(l),
                bound: finite(b.constant),
                structural_factor: finite(b.structural_factor()),
                finite: l.is_finite() && b.constant.is_finite(),
            }),
            Err(e) => {
                lipschitz_error = Some(e.to_string());
                break;
            }
        }
    }
    let (growth, growth_error) = match estimate_linear_growth(map, check.t_max) {
        Ok(g) => (Some(g), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let (positivity, positivity_error) = if with_positivity {
        match lattice.positivity_conditions(map, check.eps, check.t_max) {
            Ok(p) => (Some(p), None),
            Err(e) => (None, Some(e.to_string())),
        }
    } else {
        (None, None)
    };
    let suggestion = map
        .lipschitz_unsafe()
        .then(|| "not locally Lipschitz near zero; use family `cev_tilde` with the same gamma".to_string());
    MapReport {
        name: map.name().to_string(),
        family: map.family().clone(),
        domain: map.domain().name(),
        lipschitz_unsafe: map.lipschitz_unsafe(),
        suggestion,
        lipschitz: rows,
        lipschitz_error,
        growth,
        growth_error,
        positivity,
        positivity_error,
        derivative_max_rel_err: check_derivative_consistency(map, check.t_max).ok().map(|d| d.max_rel_err),
    }
}

impl MapReport {
    fn lipschitz_ok(&self) -> bool {
        !self.lipschitz_unsafe && self.lipschitz_error.is_none() && self.lipschitz.iter().all(|r| r.finite)
    }

    fn growth_ok(&self) -> bool {
        self.growth.as_ref().is_some_and(|g| g.verdict)
    }
}

#[derive(Serialize)]
struct CheckReport {
    constructed: bool,
    construction_error: Option<String>,
    diffusion: Option<MapReport>,
    drift: Option<MapReport>,
    requirements: BTreeMap<String, bool>,
    pass: bool,
}

pub fn check(path: &Path, o: &Overrides) -> Result<(), Failure> {
    let mut r = prepare(path, o)?;
    let dir = out_dir(&r)?.to_path_buf();
    let required = r.config.check.require.clone().unwrap_or_default();
    let built = build_map(&r.config.model.diffusion).and_then(|d| {
        let drift_spec = r.config.model.drift.clone().unwrap_or_else(config::ModelSpec::zero);
        build_map(&drift_spec).map(|a| (d, a))
    });
    let ((diffusion, dspec), (drift, aspec)) = match built {
        Ok(b) => b,
        Err(e) => {
            let report = CheckReport {
                constructed: false,
                construction_error: Some(e.to_string()),
                diffusion: None,
                drift: None,
                requirements: required.iter().map(|k| (k.clone(), false)).collect(),
                pass: false,
            };
            write_json(&dir, "check_report.json", &report)?;
            return Err(Failure::Check(format!("model rejected: {e}")));
        }
    };
    r.config.model.diffusion = dspec;
    r.config.model.drift = Some(aspec);
    let signed = diffusion.domain() != Domain::AllReals;
    let d = map_report(&diffusion, &r.space, &r.config.check, signed || required.iter().any(|k| k == "positivity"));
    let a = map_report(&drift, &r.space, &r.config.check, false);
    let requirements: BTreeMap<String, bool> = required
        .iter()
        .map(|k| {
            let ok = match k.as_str() {
                "lipschitz" => d.lipschitz_ok() && a.lipschitz_ok(),
                "growth" => d.growth_ok() && a.growth_ok(),
                _ => d.positivity.is_some_and(|p| p.all_pass()),
            };
            (k.clone(), ok)
        })
        .collect();
    let pass = requirements.values().all(|&v| v);
    let report = CheckReport {
        constructed: true,
        construction_error: None,
        diffusion: Some(d),
        drift: Some(a),
        requirements,
        pass,
    };
    write_json(&dir, "check_report.json", &report)?;
    write_json(&dir, "resolved_config.json", &r.config)?;
    if pass {
        Ok(())
    } else {
        let failed: Vec<&String> = report.requirements.iter().filter(|(_, v)| !**v).map(|(k, _)| k).collect();
        Err(Failure::Check(format!("requirements not met: {failed:?}")))
    }
}

#[derive(Serialize)]
struct MaturityReport {
    maturity: f64,
    n_compared: usize,
    pathwise_mean: f64,
    pathwise_max: f64,
    terminal: MomentComparison,
    convergence: ConvergenceTable,
    pass: bool,
}

#[derive(Serialize)]
struct ExpModelSummary {
    with_correction: ExpModelReport,
    without_correction: ExpModelReport,
}

#[derive(Serialize)]
struct CompareReport {
    dt: f64,
    horizon: f64,
    n_paths: usize,
    maturities: Vec<MaturityReport>,
    exp_model: Option<ExpModelSummary>,
    pass: bool,
}

pub fn compare(path: &Path, o: &Overrides) -> Result<(), Failure> {
    let mut r = prepare(path, o)?;
    let coeffs = build_model(&mut r.config.model).map_err(setup_err)?;
    let cmp = r.config.compare.clone();
    if cmp.maturities.is_empty() {
        return Err(Failure::Config("compare.maturities must list at least one maturity".into()));
    }
    let mut sim = r.sim.clone();
    sim.snapshot_stride = usize::MAX;
    sim.positivity_monitor = false;
    sim.track_maturities = cmp.maturities.clone();
    let specs = cmp
        .maturities
        .iter()
        .map(|&t| ProjectionSpec::from_curve(t, coeffs.clone(), r.q.clone(), &r.g0, cmp.absorb_at_zero))
        .collect::<Result<Vec<_>, _>>()
        .map_err(setup_err)?;
    // Refuse before any simulation work.
    for spec in &specs {
        if r.space.node_index(spec.maturity).is_none() {
            return Err(Failure::Coupling(format!("maturity {} is not a grid node", spec.maturity)));
        }
    }
    if r.space.node_multiple(sim.dt).is_none() {
        return Err(Failure::Coupling(format!("dt = {} is not a multiple of the grid spacing", sim.dt)));
    }
    let ens = simulate_ensemble(&r.g0, &coeffs, &r.q, &sim).map_err(setup_err)?;
    let dir = out_dir(&r)?.to_path_buf();
    let format = r.config.outputs.format;
    let mut fixed = TableWriter::create(&dir, "fixed_maturity", &["path_id", "t", "T", "F_sde", "F_spde_projected", "abs_diff"], format)?;
    let mut conv = TableWriter::create(&dir, "convergence", &["T", "dt", "error_vs_reference", "se", "spde_vs_sde", "n_compared"], format)?;
    let reference = match cmp.reference {
        ReferenceSpec::FinestLevel => Reference::FinestLevel,
        ReferenceSpec::ExactGbm { sigma } => Reference::ExactGbm { sigma },
    };
    let mut reports = Vec::new();
    for (slot, spec) in specs.iter().enumerate() {
        let c = compare_projection(&ens, spec, &sim).map_err(setup_err)?;
        for (p, f) in ens.paths.iter().zip(&c.sde.paths) {
            let proj = &p.tracked[slot].values;
            for (k, (a, b)) in f.values.iter().zip(proj).enumerate() {
                fixed.row(&[
                    Cell::Int(p.path_id),
                    Cell::Real(sim.time(k)),
                    Cell::Real(spec.maturity),
                    Cell::Real(*a),
                    Cell::Real(*b),
                    Cell::Real((a - b).abs()),
                ])?;
            }
        }
        let table = projection_convergence(&r.g0, spec, &sim, &cmp.factors, reference).map_err(setup_err)?;
        for row in &table.rows {
            conv.row(&[
                Cell::Real(spec.maturity),
                Cell::Real(row.dt),
                Cell::Real(row.error_vs_reference),
                Cell::Real(row.se),
                Cell::Real(row.spde_vs_sde),
                Cell::Int(row.n_compared as u64),
            ])?;
        }
        let rep = c.report;
        reports.push(MaturityReport {
            maturity: spec.maturity,
            n_compared: rep.n_compared,
            pathwise_mean: rep.pathwise_mean,
            pathwise_max: rep.pathwise_max,
            pass: rep.n_compared > 0 && rep.terminal.means_agree && rep.terminal.variances_agree,
            terminal: rep.terminal,
            convergence: table,
        });
    }
    fixed.finish()?;
    conv.finish()?;
    let exp_model = if cmp.exp_model {
        let run = |corr| exp_model_check(&r.g0, &coeffs, &r.q, &r.sim, &cmp.factors, corr).map_err(setup_err);
        let summary = ExpModelSummary { with_correction: run(true)?, without_correction: run(false)? };
        let mut t = TableWriter::create(&dir, "exp_model", &["with_correction", "dt", "mean_sup_discrepancy", "se", "max_sup_discrepancy", "breakdowns"], format)?;
        for rep in [&summary.with_correction, &summary.without_correction] {
            for l in &rep.levels {
                t.row(&[
                    Cell::Int(rep.with_correction as u64),
                    Cell::Real(l.dt),
                    Cell::Real(l.mean_sup_discrepancy),
                    Cell::Real(l.se),
                    Cell::Real(l.max_sup_discrepancy),
                    Cell::Int(l.breakdowns as u64),
                ])?;
            }
        }
        t.finish()?;
        Some(summary)
    } else {
        None
    };
    let pass = reports.iter().all(|m| m.pass);
    let report = CompareReport { dt: sim.dt, horizon: sim.horizon, n_paths: sim.n_paths, maturities: reports, exp_model, pass };
    write_json(&dir, "compare_report.json", &report)?;
    write_json(&dir, "resolved_config.json", &r.config)?;
    Ok(())
}
