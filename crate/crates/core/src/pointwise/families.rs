//! Built-in kernel families: CEV, CEV with a state-dependent exponent, separable
//! `β(t)φ(y)`, and the exponential form `y·ψ̃(t, y)`.

use std::fmt;
use std::sync::Arc;

use super::{Domain, Family, PointwiseMap};
use crate::error::{invalid, Result};

type TimeFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Bounded non-negative time profile `β(t)` with its derivative.
#[derive(Clone)]
pub struct TimeFactor {
    value: TimeFn,
    deriv: TimeFn,
    label: String,
}

impl fmt::Debug for TimeFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("TimeFactor").field(&self.label).finish()
    }
}

impl TimeFactor {
    pub fn constant(level: f64) -> Result<Self> {
        Self::exp_decay(level, 0.0)
    }

    /// `β(t) = level · e^{-rate·t}` with `rate ≥ 0`.
    pub fn exp_decay(level: f64, rate: f64) -> Result<Self> {
        if !(level.is_finite() && level >= 0.0) {
            return Err(invalid("beta", "must be finite and non-negative"));
        }
        if !(rate.is_finite() && rate >= 0.0) {
            return Err(invalid("beta_decay", "must be finite and non-negative"));
        }
        let label = if rate == 0.0 {
            format!("{level}")
        } else {
            format!("{level}·exp(-{rate}t)")
        };
        Ok(Self {
            value: Arc::new(move |t| level * (-rate * t).exp()),
            deriv: Arc::new(move |t| -rate * level * (-rate * t).exp()),
            label,
        })
    }

    pub fn value(&self, t: f64) -> f64 {
        (self.value)(t)
    }

    pub fn derivative(&self, t: f64) -> f64 {
        (self.deriv)(t)
    }
}

/// `ψ(t, y) = β(t) y^γ` on `y ≥ 0`, for `γ ≥ 1`.
///
/// Exponents in `(1, 2)` are accepted but flagged: the curve map `f ↦ f^γ` stays locally
/// bounded there while losing the local Lipschitz property.
pub fn make_cev(gamma: f64, beta: TimeFactor) -> Result<PointwiseMap> {
    if !(gamma.is_finite() && gamma >= 1.0) {
        return Err(invalid(
            "gamma",
            format!(
                "CEV exponent {gamma} < 1: the derivative γy^(γ-1) blows up at 0, \
                 so the curve norm of f^γ is not controlled by the norm of f"
            ),
        ));
    }
    let (b0, b1, b2, b3) = (beta.clone(), beta.clone(), beta.clone(), beta);
    let power = move |y: f64, p: f64| -> f64 {
        if p == 0.0 {
            1.0
        } else if p == 1.0 {
            y
        } else if p == 2.0 {
            y * y
        } else {
            y.powf(p)
        }
    };
    let map = PointwiseMap::new(
        format!("cev(gamma={gamma})"),
        Domain::NonNegative,
        move |t, y| b0.value(t) * power(y, gamma),
        move |t, y| b1.value(t) * gamma * power(y, gamma - 1.0),
    )
    .with_time_derivative(move |t, y| b2.derivative(t) * power(y, gamma))
    .with_second_derivative(move |t, y| {
        if gamma == 1.0 {
            0.0
        } else {
            b3.value(t) * gamma * (gamma - 1.0) * power(y, gamma - 2.0)
        }
    })
    .with_family(Family::Cev { gamma })
    .with_lipschitz_unsafe(gamma > 1.0 && gamma < 2.0);
    Ok(map)
}

/// Exponent bridge `γ̃`: 1 on `[0, ε]`, `γ` from `2ε` on, smoothstep in between.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CevTildeExponent {
    pub gamma: f64,
    pub eps: f64,
}

impl CevTildeExponent {
    fn u(&self, y: f64) -> Option<f64> {
        (y > self.eps && y < 2.0 * self.eps).then(|| (y - self.eps) / self.eps)
    }

    pub fn value(&self, y: f64) -> f64 {
        match self.u(y) {
            Some(u) => 1.0 + (self.gamma - 1.0) * u * u * (3.0 - 2.0 * u),
            None if y <= self.eps => 1.0,
            None => self.gamma,
        }
    }

    pub fn derivative(&self, y: f64) -> f64 {
        match self.u(y) {
            Some(u) => (self.gamma - 1.0) * 6.0 * u * (1.0 - u) / self.eps,
            None => 0.0,
        }
    }

    pub fn second_derivative(&self, y: f64) -> f64 {
        match self.u(y) {
            Some(u) => (self.gamma - 1.0) * 6.0 * (1.0 - 2.0 * u) / (self.eps * self.eps),
            None => 0.0,
        }
    }
}

/// `ψ(y) = y^{γ̃(y)}`, which equals `y` near zero and `y^γ` away from it.
pub fn make_cev_tilde(gamma: f64, eps: f64) -> Result<PointwiseMap> {
    if !(gamma.is_finite() && gamma > 1.0) {
        return Err(invalid("gamma", "state-dependent CEV requires gamma > 1"));
    }
    if !(eps.is_finite() && eps > 0.0) {
        return Err(invalid("eps", "must be positive"));
    }
    let g = CevTildeExponent { gamma, eps };
    let psi = move |y: f64| -> f64 {
        if y <= g.eps {
            y
        } else {
            y.powf(g.value(y))
        }
    };
    let dpsi = move |y: f64| -> f64 {
        if y <= g.eps {
            1.0
        } else {
            let e = g.value(y);
            e * y.powf(e - 1.0) + y.powf(e) * y.ln() * g.derivative(y)
        }
    };
    let d2psi = move |y: f64| -> f64 {
        if y <= g.eps {
            return 0.0;
        }
        // ψ = exp(γ̃ ln y), ψ'/ψ = γ̃' ln y + γ̃/y.
        let e = g.value(y);
        let de = g.derivative(y);
        let d2e = g.second_derivative(y);
        let p = y.powf(e);
        let r = de * y.ln() + e / y;
        let dr = d2e * y.ln() + 2.0 * de / y - e / (y * y);
        p * (r * r + dr)
    };
    Ok(PointwiseMap::new(
        format!("cev_tilde(gamma={gamma}, eps={eps})"),
        Domain::NonNegative,
        move |_, y| psi(y),
        move |_, y| dpsi(y),
    )
    .with_time_derivative(|_, _| 0.0)
    .with_second_derivative(move |_, y| d2psi(y))
    .with_family(Family::CevTilde { gamma, eps }))
}

/// `ψ(t, y) = β(t) φ(y)`; `phi` is evaluated at `t = 0`.
pub fn make_separable(beta: TimeFactor, phi: PointwiseMap) -> PointwiseMap {
    let name = format!("{}*{}", beta.label, phi.name());
    let domain = phi.domain();
    let unsafe_flag = phi.lipschitz_unsafe();
    let (p, dp) = (phi.psi_fn().clone(), phi.d_psi_dy_fn().clone());
    let (b0, b1, b2) = (beta.clone(), beta.clone(), beta.clone());
    let p2 = p.clone();
    let mut map = PointwiseMap::new(
        name,
        domain,
        move |t, y| b0.value(t) * p(0.0, y),
        move |t, y| b1.value(t) * dp(0.0, y),
    )
    .with_time_derivative(move |t, y| b2.derivative(t) * p2(0.0, y))
    .with_family(Family::Separable)
    .with_lipschitz_unsafe(unsafe_flag);
    if let Some(d2) = phi.d2_psi_dy2_fn().cloned() {
        map = map.with_second_derivative(move |t, y| beta.value(t) * d2(0.0, y));
    }
    map
}

/// `ψ(t, y) = y·ψ̃(t, y)` for a kernel `ψ̃` on a non-negative domain.
pub fn make_exp_form(psi_tilde: PointwiseMap) -> Result<PointwiseMap> {
    if psi_tilde.domain() == Domain::AllReals {
        return Err(invalid(
            "psi_tilde",
            "exponential-form kernels need a non-negative or positive domain",
        ));
    }
    let (p, dp) = (psi_tilde.psi_fn().clone(), psi_tilde.d_psi_dy_fn().clone());
    let p1 = p.clone();
    let mut map = PointwiseMap::new(
        format!("y*{}", psi_tilde.name()),
        psi_tilde.domain(),
        move |t, y| y * p(t, y),
        move |t, y| p1(t, y) + y * dp(t, y),
    )
    .with_family(Family::ExpForm);
    if let Some(dt) = psi_tilde.d_psi_dt_fn().cloned() {
        map = map.with_time_derivative(move |t, y| y * dt(t, y));
    }
    if let Some(d2) = psi_tilde.d2_psi_dy2_fn().cloned() {
        let dp = psi_tilde.d_psi_dy_fn().clone();
        map = map.with_second_derivative(move |t, y| 2.0 * dp(t, y) + y * d2(t, y));
    }
    Ok(map)
}
