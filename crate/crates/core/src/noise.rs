//! Truncated Q-Wiener noise `W = Σ_j √ℓ_j β^j e_j` and its counter-based normal streams.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::space::{CurveGrid, SpaceConfig};

/// Accepted entrywise deviation of the Gram matrix from the identity.
pub const GRAM_TOLERANCE: f64 = 1e-3;

/// Analytic eigenfunction families, orthonormalised before use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Shape {
    /// `e ≡ 1`.
    Const,
    /// `1 − e^{−a x}`.
    ExpSat { a: f64 },
    /// `e^{−a x} sin(ω x)`.
    Damped { a: f64, omega: f64 },
}

impl Shape {
    fn curve(&self, cfg: &Arc<SpaceConfig>) -> Result<CurveGrid> {
        let c = cfg.weight_param();
        match *self {
            Shape::Const => Ok(CurveGrid::constant(cfg, 1.0)),
            Shape::ExpSat { a } => {
                if !(2.0 * a > c) {
                    return Err(invalid("expsat.a", format!("need 2a > c = {c} for a finite norm, got a = {a}")));
                }
                CurveGrid::from_fn(cfg, |x| 1.0 - (-a * x).exp(), Some(1.0))
            }
            Shape::Damped { a, omega } => {
                if !(2.0 * a > c) || !(omega > 0.0) {
                    return Err(invalid(
                        "damped",
                        format!("need 2a > c = {c} and omega > 0, got a = {a}, omega = {omega}"),
                    ));
                }
                CurveGrid::from_fn(cfg, |x| (-a * x).exp() * (omega * x).sin(), Some(0.0))
            }
        }
    }
}

/// Eigen-system `{(ℓ_j, e_j)}` of the covariance operator `Q`.
#[derive(Debug, Clone)]
pub struct CovarianceOperator {
    config: Arc<SpaceConfig>,
    lambdas: Vec<f64>,
    sqrt_lambdas: Vec<f64>,
    basis: Vec<CurveGrid>,
    gram_residual: f64,
}

impl CovarianceOperator {
    /// Uses the given eigenfunctions as they are; they must be orthonormal to within
    /// [`GRAM_TOLERANCE`].
    pub fn new(pairs: Vec<(f64, CurveGrid)>) -> Result<Self> {
        let first = pairs
            .first()
            .ok_or_else(|| invalid("eigenpairs", "at least one eigenpair is required"))?;
        let config = first.1.config().clone();
        for (j, (l, e)) in pairs.iter().enumerate() {
            if !(*l > 0.0) || !l.is_finite() {
                return Err(invalid("lambda", format!("eigenvalue {j} must be positive, got {l}")));
            }
            if **e.config() != *config {
                return Err(Error::ConfigMismatch);
            }
        }
        let (lambdas, basis): (Vec<f64>, Vec<CurveGrid>) = pairs.into_iter().unzip();
        let gram_residual = gram_residual(&basis)?;
        if gram_residual > GRAM_TOLERANCE {
            return Err(Error::Degenerate(format!(
                "eigenfunctions are not orthonormal: Gram residual {gram_residual:.3e}"
            )));
        }
        Ok(Self::assemble(config, lambdas, basis, gram_residual))
    }

    /// Builds eigenfunctions from analytic shapes by modified Gram–Schmidt, in order.
    pub fn from_shapes(cfg: &Arc<SpaceConfig>, shapes: &[(f64, Shape)]) -> Result<Self> {
        if shapes.is_empty() {
            return Err(invalid("eigenpairs", "at least one eigenpair is required"));
        }
        let mut basis: Vec<CurveGrid> = Vec::with_capacity(shapes.len());
        for (j, (l, shape)) in shapes.iter().enumerate() {
            if !(*l > 0.0) || !l.is_finite() {
                return Err(invalid("lambda", format!("eigenvalue {j} must be positive, got {l}")));
            }
            let mut v = shape.curve(cfg)?;
            for q in &basis {
                let p = v.inner_product(q)?;
                v = v.lin_comb(1.0, q, -p)?;
            }
            let n = v.norm();
            if !(n > 1e-8) {
                return Err(Error::Degenerate(format!(
                    "eigenfunction {j} ({shape:?}) is linearly dependent on the previous ones"
                )));
            }
            basis.push(v.scale(1.0 / n));
        }
        let lambdas = shapes.iter().map(|(l, _)| *l).collect();
        let residual = gram_residual(&basis)?;
        Ok(Self::assemble(cfg.clone(), lambdas, basis, residual))
    }

    /// Eight-factor default: a level factor, three saturating slopes and four damped humps.
    pub fn default_shapes(c: f64) -> Vec<(f64, Shape)> {
        vec![
            (1e-2, Shape::Const),
            (5e-3, Shape::ExpSat { a: c }),
            (3e-3, Shape::ExpSat { a: 2.0 * c }),
            (2e-3, Shape::ExpSat { a: 4.0 * c }),
            (1e-3, Shape::Damped { a: c, omega: 0.5 * c }),
            (8e-4, Shape::Damped { a: c, omega: c }),
            (5e-4, Shape::Damped { a: 1.5 * c, omega: 2.0 * c }),
            (3e-4, Shape::Damped { a: 2.0 * c, omega: 3.0 * c }),
        ]
    }

    pub fn default_system(cfg: &Arc<SpaceConfig>) -> Result<Self> {
        Self::from_shapes(cfg, &Self::default_shapes(cfg.weight_param()))
    }

    fn assemble(config: Arc<SpaceConfig>, lambdas: Vec<f64>, basis: Vec<CurveGrid>, gram_residual: f64) -> Self {
        let sqrt_lambdas = lambdas.iter().map(|l| l.sqrt()).collect();
        Self {
            config,
            lambdas,
            sqrt_lambdas,
            basis,
            gram_residual,
        }
    }

    pub fn config(&self) -> &Arc<SpaceConfig> {
        &self.config
    }

    /// Truncation level `J`.
    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn eigenfunctions(&self) -> &[CurveGrid] {
        &self.basis
    }

    /// `Σ ℓ_j` over the declared pairs.
    pub fn trace(&self) -> f64 {
        self.lambdas.iter().sum()
    }

    /// `max_{ij} |G_ij − δ_ij|`.
    pub fn gram_residual(&self) -> f64 {
        self.gram_residual
    }

    /// `ΔW = Σ_j √(ℓ_j dt) z_j e_j` for the given standard normals.
    pub fn sample_increment(&self, dt: f64, z: &[f64]) -> Result<CurveGrid> {
        if !(dt > 0.0) {
            return Err(invalid("dt", format!("must be positive, got {dt}")));
        }
        if z.len() != self.len() {
            return Err(invalid("z", format!("expected {} normals, got {}", self.len(), z.len())));
        }
        let sdt = dt.sqrt();
        let coeffs: Vec<f64> = self.sqrt_lambdas.iter().zip(z).map(|(s, z)| s * sdt * z).collect();
        Ok(self.combine(&coeffs))
    }

    /// `Σ_j a_j e_j`.
    pub fn combine(&self, coeffs: &[f64]) -> CurveGrid {
        let n = self.config.n_nodes();
        let mut values = vec![0.0; n];
        let mut tail = 0.0;
        for (a, e) in coeffs.iter().zip(&self.basis) {
            for (v, ev) in values.iter_mut().zip(e.values()) {
                *v += a * ev;
            }
            tail += a * e.tail();
        }
        CurveGrid::from_parts(&self.config, values, tail)
    }

    /// Draws `ΔW` for `step` from a normal source.
    pub fn sample_from(&self, dt: f64, source: &dyn NormalSource, step: u64) -> Result<CurveGrid> {
        let mut z = vec![0.0; self.len()];
        source.fill(step, StreamTag::Curve, &mut z);
        self.sample_increment(dt, &z)
    }

    /// `x ↦ Σ_j ℓ_j e_j(x)²` on the nodes and the tail.
    pub fn variance_kernel(&self) -> CurveGrid {
        let n = self.config.n_nodes();
        let mut values = vec![0.0; n];
        let mut tail = 0.0;
        for (l, e) in self.lambdas.iter().zip(&self.basis) {
            for (v, ev) in values.iter_mut().zip(e.values()) {
                *v += l * ev * ev;
            }
            tail += l * e.tail() * e.tail();
        }
        CurveGrid::from_parts(&self.config, values, tail)
    }

    /// `Σ_j ℓ_j e_j(x1) e_j(x2)`.
    pub fn covariance(&self, x1: f64, x2: f64) -> Result<f64> {
        let mut s = 0.0;
        for (l, e) in self.lambdas.iter().zip(&self.basis) {
            s += l * e.delta_eval(x1)? * e.delta_eval(x2)?;
        }
        Ok(s)
    }

    /// Eigenfunction values `e_j(x)`.
    pub fn eval_basis(&self, x: f64) -> Result<Vec<f64>> {
        self.basis.iter().map(|e| e.delta_eval(x)).collect()
    }

    /// `c_t(T) = (Σ_j ℓ_j e_j(T − t)²)^{1/2}`.
    pub fn c_coeff(&self, t: f64, maturity: f64) -> Result<f64> {
        if !(t >= 0.0) || maturity < t {
            return Err(Error::Domain(format!("c_coeff needs 0 ≤ t ≤ T, got t = {t}, T = {maturity}")));
        }
        let x = maturity - t;
        Ok(self.covariance(x, x)?.sqrt())
    }

    /// Instantaneous correlation of the forward rates with maturities `T1` and `T2`.
    pub fn correlation(&self, t: f64, t1: f64, t2: f64) -> Result<f64> {
        if t1 == t2 {
            self.c_coeff(t, t1)?;
            if self.covariance(t1 - t, t1 - t)? == 0.0 {
                return Err(Error::Degenerate(format!("c_t(T) vanishes at T − t = {}", t1 - t)));
            }
            return Ok(1.0);
        }
        let c1 = self.c_coeff(t, t1)?;
        let c2 = self.c_coeff(t, t2)?;
        if c1 == 0.0 || c2 == 0.0 {
            return Err(Error::Degenerate(format!(
                "c_t(T) vanishes (c(T1) = {c1}, c(T2) = {c2})"
            )));
        }
        let rho = self.covariance(t1 - t, t2 - t)? / (c1 * c2);
        Ok(rho.clamp(-1.0, 1.0))
    }
}

fn gram_residual(basis: &[CurveGrid]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (i, a) in basis.iter().enumerate() {
        for (j, b) in basis.iter().enumerate().skip(i) {
            let g = a.inner_product(b)?;
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g - target).abs());
        }
    }
    Ok(worst)
}

/// Which independent stream a draw belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamTag {
    /// Normals driving the curve noise `ΔW`.
    Curve,
    /// Normals driving stand-alone scalar SDEs.
    Scalar,
}

impl StreamTag {
    fn id(self) -> u64 {
        match self {
            StreamTag::Curve => 0,
            StreamTag::Scalar => 1,
        }
    }
}

/// Standard normals indexed by time step, independent of call order.
pub trait NormalSource: Send + Sync {
    fn fill(&self, step: u64, tag: StreamTag, out: &mut [f64]);
}

/// Normals of one path, keyed by `(master_seed, path_id, step, tag)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CounterStream {
    master_seed: u64,
    path_id: u64,
}

impl CounterStream {
    pub fn new(master_seed: u64, path_id: u64) -> Self {
        Self { master_seed, path_id }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn path_id(&self) -> u64 {
        self.path_id
    }

    fn rng(&self, step: u64, tag: StreamTag) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.master_seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.path_id.to_le_bytes());
        key[16..24].copy_from_slice(&step.to_le_bytes());
        key[24..].copy_from_slice(&tag.id().to_le_bytes());
        ChaCha8Rng::from_seed(key)
    }
}

impl NormalSource for CounterStream {
    fn fill(&self, step: u64, tag: StreamTag, out: &mut [f64]) {
        let mut rng = self.rng(step, tag);
        for z in out.iter_mut() {
            *z = StandardNormal.sample(&mut rng);
        }
    }
}

/// Coarse-step normals `Z_k = Σ_{i<m} Z'_{km+i} / √m` built from a finer stream, so paths
/// at step `m·dt` share their Brownian motion with paths at step `dt`.
#[derive(Debug, Clone, Copy)]
pub struct Aggregated<S> {
    fine: S,
    factor: u64,
}

impl<S: NormalSource> Aggregated<S> {
    pub fn new(fine: S, factor: u64) -> Result<Self> {
        if factor == 0 {
            return Err(invalid("factor", "must be at least 1"));
        }
        Ok(Self { fine, factor })
    }
}

impl<S: NormalSource> NormalSource for Aggregated<S> {
    fn fill(&self, step: u64, tag: StreamTag, out: &mut [f64]) {
        if self.factor == 1 {
            return self.fine.fill(step, tag, out);
        }
        out.iter_mut().for_each(|z| *z = 0.0);
        let mut buf = vec![0.0; out.len()];
        for i in 0..self.factor {
            self.fine.fill(step * self.factor + i, tag, &mut buf);
            for (o, b) in out.iter_mut().zip(&buf) {
                *o += b;
            }
        }
        let s = (self.factor as f64).sqrt();
        out.iter_mut().for_each(|z| *z /= s);
    }
}

/// All-zero normals.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroSource;

impl NormalSource for ZeroSource {
    fn fill(&self, _step: u64, _tag: StreamTag, out: &mut [f64]) {
        out.iter_mut().for_each(|z| *z = 0.0);
    }
}
