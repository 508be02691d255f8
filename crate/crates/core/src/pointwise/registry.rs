//! Named closed-form kernels selectable from configuration files.

use std::collections::BTreeMap;

use super::{Domain, PointwiseMap};
use crate::error::{invalid, Error, Result};

/// Named numeric parameters with defaults tracked for echoing.
#[derive(Debug)]
pub struct Params<'a> {
    owner: String,
    given: &'a BTreeMap<String, f64>,
    resolved: BTreeMap<String, f64>,
}

impl<'a> Params<'a> {
    pub fn new(owner: impl Into<String>, given: &'a BTreeMap<String, f64>) -> Self {
        Self {
            owner: owner.into(),
            given,
            resolved: BTreeMap::new(),
        }
    }

    pub fn required(&mut self, key: &str) -> Result<f64> {
        match self.given.get(key) {
            Some(&v) => {
                self.resolved.insert(key.to_string(), v);
                Ok(v)
            }
            None => Err(Error::InvalidParameter {
                name: "params",
                reason: format!("`{}` requires parameter `{key}`", self.owner),
            }),
        }
    }

    pub fn optional(&mut self, key: &str, default: f64) -> f64 {
        let v = self.given.get(key).copied().unwrap_or(default);
        self.resolved.insert(key.to_string(), v);
        v
    }

    /// Fails on keys that were never read; returns every parameter with defaults filled in.
    pub fn finish(self) -> Result<BTreeMap<String, f64>> {
        if let Some(unknown) = self.given.keys().find(|k| !self.resolved.contains_key(*k)) {
            return Err(Error::InvalidParameter {
                name: "params",
                reason: format!("unknown parameter `{unknown}` for `{}`", self.owner),
            });
        }
        Ok(self.resolved)
    }
}

const NAMES: &[&str] = &[
    "zero",
    "constant",
    "identity",
    "linear",
    "square",
    "sqrt",
    "sin",
    "shifted",
    "exp_decay",
    "mean_reverting",
];

pub fn builtin_names() -> &'static [&'static str] {
    NAMES
}

pub(crate) fn zero() -> PointwiseMap {
    PointwiseMap::new("zero", Domain::AllReals, |_, _| 0.0, |_, _| 0.0)
        .with_time_derivative(|_, _| 0.0)
        .with_second_derivative(|_, _| 0.0)
}

fn constant(value: f64) -> PointwiseMap {
    PointwiseMap::new(format!("constant({value})"), Domain::AllReals, move |_, _| value, |_, _| 0.0)
        .with_time_derivative(|_, _| 0.0)
        .with_second_derivative(|_, _| 0.0)
}

fn linear(scale: f64) -> PointwiseMap {
    PointwiseMap::new(format!("{scale}*y"), Domain::AllReals, move |_, y| scale * y, move |_, _| scale)
        .with_time_derivative(|_, _| 0.0)
        .with_second_derivative(|_, _| 0.0)
}

/// Looks up a time-independent kernel by name and returns it with its resolved parameters.
pub fn builtin(
    name: &str,
    params: &BTreeMap<String, f64>,
) -> Result<(PointwiseMap, BTreeMap<String, f64>)> {
    let mut p = Params::new(name, params);
    let map = match name {
        "zero" => zero(),
        "constant" => constant(p.required("value")?),
        "identity" => linear(1.0),
        "linear" => linear(p.required("scale")?),
        "square" => PointwiseMap::new("y^2", Domain::AllReals, |_, y| y * y, |_, y| 2.0 * y)
            .with_time_derivative(|_, _| 0.0)
            .with_second_derivative(|_, _| 2.0),
        "sqrt" => PointwiseMap::new("sqrt(y)", Domain::Positive, |_, y: f64| y.sqrt(), |_, y: f64| {
            0.5 / y.sqrt()
        })
        .with_time_derivative(|_, _| 0.0)
        .with_second_derivative(|_, y: f64| -0.25 / (y * y.sqrt())),
        "sin" => PointwiseMap::new("sin(y)", Domain::AllReals, |_, y: f64| y.sin(), |_, y: f64| {
            y.cos()
        })
        .with_time_derivative(|_, _| 0.0)
        .with_second_derivative(|_, y: f64| -y.sin()),
        "shifted" => {
            let s = p.optional("shift", 1.0);
            PointwiseMap::new(format!("y+{s}"), Domain::AllReals, move |_, y| y + s, |_, _| 1.0)
                .with_time_derivative(|_, _| 0.0)
                .with_second_derivative(|_, _| 0.0)
        }
        "exp_decay" => {
            let r = p.optional("rate", 1.0);
            PointwiseMap::new(
                format!("exp(-{r}y)"),
                Domain::AllReals,
                move |_, y: f64| (-r * y).exp(),
                move |_, y: f64| -r * (-r * y).exp(),
            )
            .with_time_derivative(|_, _| 0.0)
            .with_second_derivative(move |_, y: f64| r * r * (-r * y).exp())
        }
        "mean_reverting" => {
            let kappa = p.required("kappa")?;
            let theta = p.required("theta")?;
            PointwiseMap::new(
                format!("{kappa}*({theta}-y)"),
                Domain::AllReals,
                move |_, y| kappa * (theta - y),
                move |_, _| -kappa,
            )
            .with_time_derivative(|_, _| 0.0)
            .with_second_derivative(|_, _| 0.0)
        }
        other => {
            return Err(invalid(
                "formula",
                format!("unknown formula `{other}`; known: {}", NAMES.join(", ")),
            ))
        }
    };
    Ok((map, p.finish()?))
}
