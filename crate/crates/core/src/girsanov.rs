//! Measure change by `φ(t) = σ(t, g_t)^{-1} α(t, g_t)`.
//!
//! The noise only acts on `span{e_j}`, so `φ` enters through its coordinates
//! `φ_j = ⟨φ, e_j⟩` and the Cameron–Martin norm `‖φ‖²_Q = Σ_j φ_j² / ℓ_j`. With one
//! eigenpair `ℓ = 1`, `e ≡ 1` this is the plain space norm.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::noise::CovarianceOperator;
use crate::operators::{mult_apply, MultiplicativeKernel};
use crate::pointwise::CoefficientSpec;
use crate::solver::{mean_se, simulate_ensemble, PathEnsemble, PathResult, SimConfig};
use crate::space::CurveGrid;

/// Exponents above this are flagged instead of exponentiated.
pub const NOVIKOV_OVERFLOW: f64 = 700.0;

/// Node-wise `α(t, g) / ψ(t, g)`.
pub fn phi_curve(t: f64, g: &CurveGrid, coeffs: &CoefficientSpec) -> Result<CurveGrid> {
    let kernel = MultiplicativeKernel::new(coeffs.diffusion.lift(t, g)?);
    let inverse = kernel.invert()?;
    mult_apply(inverse.kernel(), &coeffs.drift.lift(t, g)?)
}

/// Coordinates `φ_j / √ℓ_j` of `φ` in the noise directions.
pub fn noise_coordinates(phi: &CurveGrid, q: &CovarianceOperator) -> Result<Vec<f64>> {
    q.eigenfunctions()
        .iter()
        .zip(q.eigenvalues())
        .map(|(e, l)| Ok(phi.inner_product(e)? / l.sqrt()))
        .collect()
}

/// `‖φ‖²_Q`.
pub fn cameron_martin_norm_sq(phi: &CurveGrid, q: &CovarianceOperator) -> Result<f64> {
    Ok(noise_coordinates(phi, q)?.iter().map(|c| c * c).sum())
}

/// Left-endpoint states `(t_k, g_k)` of every completed step.
fn stepwise_states(path: &PathResult) -> Result<&[(f64, CurveGrid)]> {
    let steps = path.steps_completed;
    let every_step = path.snapshots.len() >= steps
        && path.snapshots[..steps]
            .iter()
            .enumerate()
            .all(|(k, (t, _))| (t - k as f64 * path.dt).abs() <= 1e-9 * path.dt);
    if !every_step {
        return Err(Error::Capability("path reweighting needs a snapshot at every step".into()));
    }
    Ok(&path.snapshots[..steps])
}

fn log_weight(path: &PathResult, coeffs: &CoefficientSpec, q: &CovarianceOperator, sign: f64) -> Result<f64> {
    let z = path
        .increments
        .as_ref()
        .ok_or_else(|| Error::Capability("path was simulated without recorded increments".into()))?;
    let states = stepwise_states(path)?;
    let dt = path.dt;
    if z.len() < states.len() {
        return Err(Error::Capability("fewer recorded increments than steps".into()));
    }
    let sdt = dt.sqrt();
    let mut w = 0.0;
    for ((t, g), zk) in states.iter().zip(z) {
        let c = noise_coordinates(&phi_curve(*t, g, coeffs)?, q)?;
        for (cj, zj) in c.iter().zip(zk) {
            w += sign * cj * sdt * zj - 0.5 * cj * cj * dt;
        }
    }
    Ok(w)
}

/// `Σ_k ⟨φ(t_k), ΔW_k⟩ − ½ Σ_k ‖φ(t_k)‖² dt` with left-endpoint `φ`.
pub fn rn_log_weight(path: &PathResult, coeffs: &CoefficientSpec, q: &CovarianceOperator) -> Result<f64> {
    log_weight(path, coeffs, q, 1.0)
}

/// Log density that removes the drift `α = σφ` from a path simulated with it:
/// `−Σ_k ⟨φ(t_k), ΔW_k⟩ − ½ Σ_k ‖φ(t_k)‖² dt`.
pub fn drift_removal_log_weight(path: &PathResult, coeffs: &CoefficientSpec, q: &CovarianceOperator) -> Result<f64> {
    log_weight(path, coeffs, q, -1.0)
}

/// Fills `rn_log_weight` on every path.
pub fn attach_rn_weights(ens: &mut PathEnsemble, coeffs: &CoefficientSpec, q: &CovarianceOperator) -> Result<()> {
    let weights: Vec<f64> = ens
        .paths
        .par_iter()
        .map(|p| rn_log_weight(p, coeffs, q))
        .collect::<Result<_>>()?;
    for (p, w) in ens.paths.iter_mut().zip(weights) {
        p.rn_log_weight = Some(w);
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct NovikovEstimate {
    /// `E[exp(½ ∫ ‖φ‖² dt)]`; absent when an exponent overflowed.
    pub mc_estimate: Option<f64>,
    pub se: Option<f64>,
    pub overflow: bool,
    /// `∫_0^{T̄} ‖φ(t)‖²_Q dt` per evaluated path.
    pub per_path_integrals: Vec<f64>,
    /// Paths where `σ` could not be inverted or the path stopped early.
    pub failed_paths: usize,
}

/// Novikov estimate over an ensemble simulated with a snapshot at every step.
pub fn novikov_from_ensemble(ens: &PathEnsemble, coeffs: &CoefficientSpec, q: &CovarianceOperator, t_bar: f64) -> Result<NovikovEstimate> {
    let per: Vec<Option<f64>> = ens
        .paths
        .par_iter()
        .map(|p| -> Result<Option<f64>> {
            if !p.survived() {
                return Ok(None);
            }
            let states = stepwise_states(p)?;
            let dt = p.dt;
            let mut integral = 0.0;
            for (t, g) in states {
                if *t >= t_bar - 1e-12 {
                    break;
                }
                match phi_curve(*t, g, coeffs) {
                    Ok(phi) => integral += cameron_martin_norm_sq(&phi, q)? * dt,
                    Err(Error::NotInvertible { .. }) | Err(Error::OutsideDomain { .. }) => return Ok(None),
                    Err(e) => return Err(e),
                }
            }
            Ok(Some(integral))
        })
        .collect::<Result<_>>()?;
    let integrals: Vec<f64> = per.iter().flatten().copied().collect();
    let failed_paths = per.len() - integrals.len();
    let overflow = integrals.iter().any(|i| 0.5 * i > NOVIKOV_OVERFLOW);
    let (mc_estimate, se) = if overflow || integrals.is_empty() {
        (None, None)
    } else {
        let e: Vec<f64> = integrals.iter().map(|i| (0.5 * i).exp()).collect();
        let (m, s) = mean_se(&e);
        (Some(m), Some(if s.is_nan() { 0.0 } else { s }))
    };
    Ok(NovikovEstimate {
        mc_estimate,
        se,
        overflow,
        per_path_integrals: integrals,
        failed_paths,
    })
}

/// Simulates to `t_bar` and estimates `E[exp(½ ∫_0^{T̄} ‖φ(t)‖² dt)]`.
pub fn novikov_estimate(
    g0: &CurveGrid,
    coeffs: &CoefficientSpec,
    q: &CovarianceOperator,
    sim: &SimConfig,
    t_bar: f64,
) -> Result<NovikovEstimate> {
    let mut s = sim.clone();
    s.horizon = t_bar;
    s.snapshot_stride = 1;
    s.track_maturities.clear();
    let ens = simulate_ensemble(g0, coeffs, q, &s)?;
    novikov_from_ensemble(&ens, coeffs, q, t_bar)
}
