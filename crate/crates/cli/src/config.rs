//! Run configuration: JSON schema, defaults and resolution into library objects.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use fwdcurve::noise::{CovarianceOperator, Shape};
use fwdcurve::pointwise::{builtin, make_cev, make_cev_tilde, make_exp_form, make_separable, CoefficientSpec, Domain, Params, PointwiseMap, TimeFactor};
use fwdcurve::solver::{SimConfig, DEFAULT_BLOWUP_NORM};
use fwdcurve::{CurveGrid, SpaceConfig};
use serde::{Deserialize, Serialize};

use crate::Failure;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub space: SpaceSection,
    #[serde(default)]
    pub initial_curve: CurveSection,
    #[serde(default)]
    pub noise: NoiseSection,
    pub model: ModelSection,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub compare: CompareSection,
    #[serde(default)]
    pub check: CheckSection,
    #[serde(default)]
    pub outputs: OutputSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpaceSection {
    /// Weight exponent `c` in `w(x) = e^{cx}`.
    pub c: f64,
    /// Defaults to the horizon leaving `1e-6` of `1/w` beyond the grid.
    pub x_max: Option<f64>,
    pub n_nodes: usize,
}

impl Default for SpaceSection {
    fn default() -> Self {
        Self { c: 1.0, x_max: None, n_nodes: 141 }
    }
}

/// `g0(x) = level + slope · e^{−rate x}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurveSection {
    pub level: f64,
    pub slope: f64,
    pub rate: f64,
}

impl Default for CurveSection {
    fn default() -> Self {
        Self { level: 1.0, slope: 0.0, rate: 1.0 }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    /// `None` selects the built-in eight-factor system.
    pub eigenpairs: Option<Vec<EigenpairSpec>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EigenpairSpec {
    pub lambda: f64,
    pub shape: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub diffusion: ModelSpec,
    #[serde(default)]
    pub drift: Option<ModelSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub family: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub formula: Option<String>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<Box<ModelSpec>>,
    #[serde(default)]
    pub domain: Option<String>,
}

impl ModelSpec {
    pub fn zero() -> Self {
        Self {
            family: "custom".into(),
            formula: Some("zero".into()),
            params: BTreeMap::new(),
            base: None,
            domain: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub dt: f64,
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub blowup_norm: f64,
    /// `None` keeps only the initial and final curves.
    pub snapshot_stride: Option<usize>,
    pub positivity_monitor: bool,
    /// Adds the log Radon–Nikodym weight of removing the drift to `curves.csv`.
    pub rn_weights: bool,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            dt: 1e-2,
            horizon: 1.0,
            n_paths: 100,
            seed: 0,
            blowup_norm: DEFAULT_BLOWUP_NORM,
            snapshot_stride: None,
            positivity_monitor: true,
            rn_weights: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceSpec {
    FinestLevel,
    ExactGbm { sigma: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareSection {
    pub maturities: Vec<f64>,
    pub absorb_at_zero: bool,
    /// Step multiples of `sim.dt` for the dt-halving sweeps.
    pub factors: Vec<u64>,
    pub reference: ReferenceSpec,
    pub exp_model: bool,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self {
            maturities: Vec::new(),
            absorb_at_zero: true,
            factors: vec![1, 2, 4, 8],
            reference: ReferenceSpec::FinestLevel,
            exp_model: false,
        }
    }
}

pub const REQUIREMENTS: &[&str] = &["lipschitz", "growth", "positivity"];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckSection {
    /// Ball radii for the local Lipschitz table.
    pub n_values: Vec<f64>,
    pub t_max: f64,
    pub eps: f64,
    /// Defaults to `lipschitz`, plus `positivity` for sign-restricted diffusions.
    pub require: Option<Vec<String>>,
}

impl Default for CheckSection {
    fn default() -> Self {
        Self { n_values: vec![1.0, 2.0, 4.0], t_max: 1.0, eps: 0.1, require: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub format: Format,
    /// Cap on the number of paths written to `curves`; `None` writes all.
    pub max_curve_paths: Option<usize>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), format: Format::Csv, max_curve_paths: None }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub dt: Option<f64>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
}

pub fn parse(text: &str, origin: &str) -> Result<RunConfig, Failure> {
    serde_json::from_str(text).map_err(|e| {
        Failure::Config(format!("{origin}: line {}, column {}: {e}", e.line(), e.column()))
    })
}

pub fn load(path: &Path) -> Result<RunConfig, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
    parse(&text, &path.display().to_string())
}

fn config_err(e: impl std::fmt::Display) -> Failure {
    Failure::Config(e.to_string())
}

/// Library objects built from a validated configuration.
pub struct Resolved {
    pub config: RunConfig,
    pub space: Arc<SpaceConfig>,
    pub g0: CurveGrid,
    pub q: CovarianceOperator,
    pub sim: SimConfig,
}

impl RunConfig {
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.sim.seed = s;
        }
        if let Some(n) = o.paths {
            self.sim.n_paths = n;
        }
        if let Some(dt) = o.dt {
            self.sim.dt = dt;
        }
        if let Some(dir) = &o.out {
            self.outputs.dir = dir.clone();
        }
        if let Some(f) = o.format {
            self.outputs.format = f;
        }
    }

    /// Builds everything except the model and fills in defaults for echoing.
    pub fn resolve(mut self) -> Result<Resolved, Failure> {
        let s = self.space.clone();
        let space = match s.x_max {
            Some(x) => SpaceConfig::new(s.c, x, s.n_nodes),
            None => SpaceConfig::with_default_horizon(s.c, s.n_nodes),
        }
        .map_err(config_err)?;
        self.space.x_max = Some(space.x_max());

        let ic = &self.initial_curve;
        if !(ic.rate > 0.0 && 2.0 * ic.rate > s.c) && ic.slope != 0.0 {
            return Err(Failure::Config(format!(
                "initial_curve.rate must exceed c/2 = {} for a finite norm",
                s.c / 2.0
            )));
        }
        let (level, slope, rate) = (ic.level, ic.slope, ic.rate);
        let g0 = CurveGrid::from_fn(&space, |x| level + slope * (-rate * x).exp(), Some(level)).map_err(config_err)?;

        let pairs = match self.noise.eigenpairs.take() {
            Some(p) => p,
            None => CovarianceOperator::default_shapes(s.c).into_iter().map(|(l, sh)| shape_spec(l, sh)).collect(),
        };
        let shapes = pairs.iter().map(parse_shape).collect::<Result<Vec<_>, _>>()?;
        let q = CovarianceOperator::from_shapes(&space, &shapes).map_err(config_err)?;
        self.noise.eigenpairs = Some(pairs);

        let sim = self.sim_config()?;
        if self.check.require.is_none() {
            self.check.require = Some(default_requirements(&self.model.diffusion));
        }
        if let Some(req) = &self.check.require {
            if let Some(bad) = req.iter().find(|r| !REQUIREMENTS.contains(&r.as_str())) {
                return Err(Failure::Config(format!("unknown check requirement `{bad}`")));
            }
        }
        if self.compare.factors.is_empty() || self.compare.factors.contains(&0) {
            return Err(Failure::Config("compare.factors must be non-empty positive integers".into()));
        }
        Ok(Resolved { config: self, space, g0, q, sim })
    }

    fn sim_config(&self) -> Result<SimConfig, Failure> {
        let s = &self.sim;
        let mut sim = SimConfig::new(s.dt, s.horizon, s.n_paths, s.seed).map_err(config_err)?;
        sim.blowup_norm = s.blowup_norm;
        sim.snapshot_stride = s.snapshot_stride.unwrap_or(usize::MAX);
        sim.positivity_monitor = s.positivity_monitor;
        sim.validate().map_err(config_err)?;
        Ok(sim)
    }
}

fn default_requirements(diffusion: &ModelSpec) -> Vec<String> {
    let mut req = vec!["lipschitz".to_string()];
    let signed = match diffusion.domain.as_deref() {
        Some(d) => d != "all_reals",
        None => matches!(diffusion.family.as_str(), "cev" | "cev_tilde" | "exp_form"),
    };
    if signed {
        req.push("positivity".into());
    }
    req
}

fn shape_spec(lambda: f64, shape: Shape) -> EigenpairSpec {
    let (name, params) = match shape {
        Shape::Const => ("const", vec![]),
        Shape::ExpSat { a } => ("expsat", vec![("a", a)]),
        Shape::Damped { a, omega } => ("damped", vec![("a", a), ("omega", omega)]),
    };
    EigenpairSpec {
        lambda,
        shape: name.into(),
        params: params.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
    }
}

fn parse_shape(e: &EigenpairSpec) -> Result<(f64, Shape), Failure> {
    let mut p = Params::new(format!("shape {}", e.shape), &e.params);
    let shape = match e.shape.as_str() {
        "const" => Shape::Const,
        "expsat" => Shape::ExpSat { a: p.required("a").map_err(config_err)? },
        "damped" => Shape::Damped {
            a: p.required("a").map_err(config_err)?,
            omega: p.required("omega").map_err(config_err)?,
        },
        other => return Err(Failure::Config(format!("unknown eigenfunction shape `{other}`"))),
    };
    p.finish().map_err(config_err)?;
    Ok((e.lambda, shape))
}

fn time_factor(p: &mut Params) -> fwdcurve::Result<TimeFactor> {
    let level = p.optional("beta", 1.0);
    let rate = p.optional("beta_rate", 0.0);
    TimeFactor::exp_decay(level, rate)
}

/// Builds a point-wise map; the returned `ModelSpec` has every default filled in.
pub fn build_map(spec: &ModelSpec) -> fwdcurve::Result<(PointwiseMap, ModelSpec)> {
    use fwdcurve::Error;
    let unexpected = |what: &str| Error::InvalidParameter {
        name: "model",
        reason: format!("family `{}` does not take `{what}`", spec.family),
    };
    let mut p = Params::new(spec.family.clone(), &spec.params);
    let mut resolved = spec.clone();
    let needs_base = matches!(spec.family.as_str(), "separable" | "exp_form");
    if spec.base.is_some() && !needs_base {
        return Err(unexpected("base"));
    }
    if spec.formula.is_some() && spec.family != "custom" {
        return Err(unexpected("formula"));
    }
    let base = || -> fwdcurve::Result<(PointwiseMap, ModelSpec)> {
        let b = spec.base.as_deref().ok_or_else(|| Error::InvalidParameter {
            name: "model",
            reason: format!("family `{}` requires `base`", spec.family),
        })?;
        build_map(b)
    };
    let map = match spec.family.as_str() {
        "cev" => {
            let gamma = p.required("gamma")?;
            make_cev(gamma, time_factor(&mut p)?)?
        }
        "cev_tilde" => {
            let gamma = p.required("gamma")?;
            let eps = p.required("eps")?;
            make_cev_tilde(gamma, eps)?
        }
        "separable" => {
            let beta = time_factor(&mut p)?;
            let (phi, b) = base()?;
            resolved.base = Some(Box::new(b));
            make_separable(beta, phi)
        }
        "exp_form" => {
            let (psi, b) = base()?;
            resolved.base = Some(Box::new(b));
            make_exp_form(psi)?
        }
        "custom" => {
            let name = spec.formula.as_deref().ok_or_else(|| Error::InvalidParameter {
                name: "model",
                reason: "family `custom` requires `formula`".into(),
            })?;
            let (map, params) = builtin(name, &spec.params)?;
            for (k, v) in params {
                p.optional(&k, v);
            }
            map
        }
        other => {
            return Err(Error::InvalidParameter {
                name: "model",
                reason: format!("unknown family `{other}`"),
            })
        }
    };
    resolved.params = p.finish()?;
    let map = match &spec.domain {
        Some(d) => {
            let dom = Domain::parse(d).ok_or_else(|| Error::InvalidParameter {
                name: "domain",
                reason: format!("unknown domain `{d}`"),
            })?;
            map.restrict(dom)?
        }
        None => map,
    };
    resolved.domain = Some(map.domain().name().to_string());
    Ok((map, resolved))
}

/// Builds drift and diffusion, writing resolved specs back into `model`.
pub fn build_model(model: &mut ModelSection) -> fwdcurve::Result<CoefficientSpec> {
    let (diffusion, d) = build_map(&model.diffusion)?;
    let (drift, a) = build_map(model.drift.as_ref().unwrap_or(&ModelSpec::zero()))?;
    model.diffusion = d;
    model.drift = Some(a);
    CoefficientSpec::new(drift, diffusion)
}
