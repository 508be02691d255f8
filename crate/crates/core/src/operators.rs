//! Multiplicative operators `M_h f = h·f`, their inversion on `H_> ∪ H_<`,
//! and the point-wise exponential and logarithm maps.

use crate::error::{Error, Result};
use crate::space::{Cone, CurveGrid};

/// Kernel `h` of a multiplicative operator together with its cone class.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplicativeKernel {
    kernel: CurveGrid,
    cone: Cone,
}

impl MultiplicativeKernel {
    pub fn new(kernel: CurveGrid) -> Self {
        let cone = kernel.cone_membership();
        Self { kernel, cone }
    }

    pub fn kernel(&self) -> &CurveGrid {
        &self.kernel
    }

    pub fn cone(&self) -> Cone {
        self.cone
    }

    pub fn is_invertible(&self) -> bool {
        self.cone.is_invertible()
    }

    /// `h·f`, node-wise with `tail = h.tail · f.tail`.
    pub fn apply(&self, f: &CurveGrid) -> Result<CurveGrid> {
        mult_apply(&self.kernel, f)
    }

    /// Kernel `1/h`. Fails unless `h ∈ H_> ∪ H_<`.
    pub fn invert(&self) -> Result<Self> {
        if !self.cone.is_invertible() {
            return Err(self.invertibility_error());
        }
        Ok(Self {
            kernel: self.kernel.map(f64::recip),
            cone: self.cone,
        })
    }

    fn invertibility_error(&self) -> Error {
        let h = &self.kernel;
        // Report the first point that breaks a common strict sign.
        let sign = if h.values()[0] > 0.0 { 1.0 } else { -1.0 };
        let bad = h.values().iter().position(|&v| v * sign <= 0.0);
        match bad {
            Some(i) => Error::NotInvertible {
                location: format!("node {i}"),
                value: h.values()[i],
            },
            None => Error::NotInvertible {
                location: "tail".into(),
                value: h.tail(),
            },
        }
    }
}

/// Node-wise product `h·f`.
pub fn mult_apply(h: &CurveGrid, f: &CurveGrid) -> Result<CurveGrid> {
    h.same_space(f)?;
    let values = h
        .values()
        .iter()
        .zip(f.values())
        .map(|(a, b)| a * b)
        .collect();
    Ok(CurveGrid::from_parts(h.config(), values, h.tail() * f.tail()))
}

pub fn invert_kernel(h: &MultiplicativeKernel) -> Result<MultiplicativeKernel> {
    h.invert()
}

/// `Exp f = {x ↦ e^{f(x)}}`; fails on overflow instead of saturating.
pub fn exp_map(f: &CurveGrid) -> Result<CurveGrid> {
    let out = f.map(f64::exp);
    if let Some(i) = out.values().iter().position(|v| !v.is_finite()) {
        return Err(Error::Range(format!(
            "exponential overflows at node {i} (value {})",
            f.values()[i]
        )));
    }
    if !out.tail().is_finite() {
        return Err(Error::Range(format!(
            "exponential overflows at the tail (value {})",
            f.tail()
        )));
    }
    Ok(out)
}

/// `Log h`, defined on `H_>`.
pub fn log_map(h: &CurveGrid) -> Result<CurveGrid> {
    if let Some(i) = h.values().iter().position(|&v| v <= 0.0) {
        return Err(Error::Domain(format!(
            "logarithm of non-positive value {} at node {i}",
            h.values()[i]
        )));
    }
    if h.tail() <= 0.0 {
        return Err(Error::Domain(format!(
            "logarithm of non-positive tail {}",
            h.tail()
        )));
    }
    Ok(h.map(f64::ln))
}
