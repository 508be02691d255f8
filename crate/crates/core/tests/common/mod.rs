#![allow(dead_code)]

use std::sync::Arc;

use fwdcurve::{CurveGrid, SpaceConfig};
use proptest::prelude::*;

/// Smooth curves `a0 + Σ a_k (1 − e^{−b_k x}) + c e^{−d x} sin(ω x)` with finite norm for
/// weight parameter `c_w` (all decay rates exceed `c_w / 2`).
#[derive(Debug, Clone)]
pub struct SmoothCurve {
    pub level: f64,
    pub slopes: Vec<(f64, f64)>,
    pub hump: (f64, f64, f64),
}

impl SmoothCurve {
    pub fn eval(&self, x: f64) -> f64 {
        let mut v = self.level;
        for (a, b) in &self.slopes {
            v += a * (1.0 - (-b * x).exp());
        }
        let (c, d, w) = self.hump;
        v + c * (-d * x).exp() * (w * x).sin()
    }

    pub fn limit(&self) -> f64 {
        self.level + self.slopes.iter().map(|(a, _)| a).sum::<f64>()
    }

    pub fn grid(&self, cfg: &Arc<SpaceConfig>) -> CurveGrid {
        CurveGrid::from_fn(cfg, |x| self.eval(x), Some(self.limit())).unwrap()
    }
}

pub fn smooth_curve(c_w: f64) -> impl Strategy<Value = SmoothCurve> {
    let rate = c_w / 2.0 + 0.05;
    (
        -3.0..3.0f64,
        prop::collection::vec((-2.0..2.0f64, rate..rate + 4.0), 0..3),
        (-1.0..1.0f64, rate..rate + 3.0, 0.1..4.0f64),
    )
        .prop_map(|(level, slopes, hump)| SmoothCurve { level, slopes, hump })
}

/// Smooth curves bounded away from zero from below.
pub fn positive_curve(c_w: f64) -> impl Strategy<Value = SmoothCurve> {
    let rate = c_w / 2.0 + 0.05;
    (
        0.2..3.0f64,
        prop::collection::vec((0.0..2.0f64, rate..rate + 4.0), 0..3),
        (0.0..0.1f64, rate..rate + 3.0, 0.1..2.0f64),
    )
        .prop_map(|(level, slopes, hump)| SmoothCurve { level, slopes, hump })
}

pub fn unit_space(n: usize) -> Arc<SpaceConfig> {
    SpaceConfig::with_default_horizon(1.0, n).unwrap()
}
