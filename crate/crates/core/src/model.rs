//! Model parameters, the mobility `m_eps(r) = (r + eps)^alpha`, the
//! entropy `U_eps` with `U_eps'' m_eps = 1`, and the energy functionals
//! driving the scheme.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{
    discrete_gradient, field_norm, hessian_sup_norm, DensityField, NormKind,
};

/// Exponents and coefficients of the chemotaxis system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub p: f64,
    pub alpha: f64,
    pub chi: f64,
    /// Spatial dimension used for regime classification.
    pub dim: usize,
    /// Mobility regularization; 0 selects `m(r) = r^alpha`.
    #[serde(default)]
    pub eps: f64,
    /// Diffusivity of the auxiliary flow.
    #[serde(default = "default_delta")]
    pub delta: f64,
}

pub fn default_delta() -> f64 {
    1.0
}

impl ModelParams {
    pub fn new(p: f64, alpha: f64, chi: f64, dim: usize, eps: f64) -> Result<Self> {
        let m = ModelParams {
            p,
            alpha,
            chi,
            dim,
            eps,
            delta: default_delta(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn with_delta(mut self, delta: f64) -> Result<Self> {
        self.delta = delta;
        self.validate()?;
        Ok(self)
    }

    pub fn with_eps(mut self, eps: f64) -> Result<Self> {
        self.eps = eps;
        self.validate()?;
        Ok(self)
    }

    /// Every violated invariant, as `field: message` strings.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            v.push(format!("alpha must lie in (0,1), got {}", self.alpha));
        }
        if !(self.p >= 1.0) || !self.p.is_finite() {
            v.push(format!("p must be >= 1, got {}", self.p));
        }
        if !(self.chi > 0.0) || !self.chi.is_finite() {
            v.push(format!("chi must be > 0, got {}", self.chi));
        }
        if !(self.eps >= 0.0) || !self.eps.is_finite() {
            v.push(format!("eps must be >= 0, got {}", self.eps));
        }
        if !(self.delta > 0.0) || !self.delta.is_finite() {
            v.push(format!("delta must be > 0, got {}", self.delta));
        }
        if self.dim == 0 {
            v.push("dim must be >= 1".into());
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParams(v.join("; ")))
        }
    }

    pub fn mobility(&self) -> Mobility {
        Mobility::Power {
            alpha: self.alpha,
            eps: self.eps,
        }
    }

    /// Exponent `p + 1 - alpha` of the internal energy.
    pub fn energy_exponent(&self) -> f64 {
        self.p + 1.0 - self.alpha
    }

    /// Coefficient `p / (chi (p - alpha) (p + 1 - alpha))`.
    pub fn energy_coefficient(&self) -> f64 {
        self.p / (self.chi * (self.p - self.alpha) * self.energy_exponent())
    }

    pub fn critical_p(&self) -> f64 {
        critical_exponent(self.alpha, self.dim)
    }
}

pub fn critical_exponent(alpha: f64, dim: usize) -> f64 {
    1.0 + alpha - 2.0 / dim as f64
}

/// Mobility functions. `Power` is the model mobility; `Constant` and
/// `Linear` are the reference limits used to validate the transport solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mobility {
    Power { alpha: f64, eps: f64 },
    Constant { value: f64 },
    Linear,
}

impl Mobility {
    #[inline]
    pub fn value(&self, r: f64) -> f64 {
        match *self {
            Mobility::Power { alpha, eps } => (r + eps).powf(alpha),
            Mobility::Constant { value } => value,
            Mobility::Linear => r,
        }
    }

    #[inline]
    pub fn d1(&self, r: f64) -> f64 {
        match *self {
            Mobility::Power { alpha, eps } => alpha * (r + eps).powf(alpha - 1.0),
            Mobility::Constant { .. } => 0.0,
            Mobility::Linear => 1.0,
        }
    }

    #[inline]
    pub fn d2(&self, r: f64) -> f64 {
        match *self {
            Mobility::Power { alpha, eps } => {
                alpha * (alpha - 1.0) * (r + eps).powf(alpha - 2.0)
            }
            _ => 0.0,
        }
    }

    /// `m(0) > 0`: transport through empty cells has finite cost.
    pub fn positive_at_zero(&self) -> bool {
        self.value(0.0) > 0.0
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Mobility::Constant { .. })
    }
}

/// `m_eps` and its first two derivatives.
pub fn mobility(r: f64, params: &ModelParams, order: u8) -> Result<f64> {
    if !(r >= 0.0) {
        return Err(Error::InvalidParams(format!("mobility needs r >= 0, got {r}")));
    }
    if params.eps == 0.0 && r == 0.0 && order >= 1 {
        return Err(Error::SingularMobility);
    }
    let m = params.mobility();
    match order {
        0 => Ok(m.value(r)),
        1 => Ok(m.d1(r)),
        2 => Ok(m.d2(r)),
        _ => Err(Error::InvalidParams(format!("mobility order {order} > 2"))),
    }
}

/// Closed form of the entropy with `U'' m_eps = 1`, `U(0) = U'(0) = 0`.
pub fn u_epsilon(r: f64, params: &ModelParams) -> Result<f64> {
    if params.eps == 0.0 {
        return Err(Error::SingularMobility);
    }
    Ok(u_epsilon_unchecked(r, params.alpha, params.eps))
}

#[inline]
pub(crate) fn u_epsilon_unchecked(r: f64, alpha: f64, eps: f64) -> f64 {
    let a = 2.0 - alpha;
    let b = 1.0 - alpha;
    ((r + eps).powf(a) - eps.powf(a)) / (a * b) - eps.powf(b) / b * r
}

/// `sum U_eps(u) vol`.
pub fn big_u(u: &DensityField, params: &ModelParams) -> Result<f64> {
    if params.eps == 0.0 {
        return Err(Error::SingularMobility);
    }
    let vol = u.grid().cell_volume();
    let mut s = 0.0;
    for &r in u.values() {
        if r < 0.0 {
            return Err(Error::InvalidParams(format!("entropy needs u >= 0, got {r}")));
        }
        s += u_epsilon_unchecked(r, params.alpha, params.eps);
    }
    Ok(s * vol)
}

/// Internal-energy part `c sum u^(p+1-alpha) vol`.
pub fn internal_energy(u: &DensityField, params: &ModelParams) -> f64 {
    let q = params.energy_exponent();
    let s: f64 = u.values().iter().map(|&r| r.max(0.0).powf(q)).sum();
    params.energy_coefficient() * s * u.grid().cell_volume()
}

/// `c ||u||^q_q - <u, v> + (||grad v||^2 + ||v||^2) / 2`.
pub fn energy(u: &DensityField, v: &DensityField, params: &ModelParams) -> f64 {
    let gv = discrete_gradient(v);
    internal_energy(u, params) - u.inner(v) + 0.5 * (gv.inner(&gv) + v.inner(v))
}

pub fn v_delta(u: &DensityField, phi: &DensityField, params: &ModelParams) -> Result<f64> {
    Ok(u.inner(phi) + params.delta * big_u(u, params)?)
}

/// Semiconvexity constant of the auxiliary functional. Always <= 0.
pub fn lambda_delta(phi: &DensityField, params: &ModelParams) -> Result<f64> {
    if params.eps == 0.0 {
        return Err(Error::SingularMobility);
    }
    let (a, e) = (params.alpha, params.eps);
    let grad_sup = crate::grid::gradient_sup_norm(phi);
    let hess_sup = hessian_sup_norm(phi);
    let sup_mm2 = a * (1.0 - a) / e.powf(2.0 * (1.0 - a));
    let sup_m1 = a / e.powf(1.0 - a);
    Ok(-(grad_sup * grad_sup) / (2.0 * params.delta) * sup_mm2 - hess_sup * sup_m1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    /// `p = 1 + alpha`.
    Thm11,
    /// `1 + alpha - 2/d < p < 1 + alpha` with `alpha >= (1 + p)/3`.
    Thm12,
    /// Critical `p = 1 + alpha - 2/d`, `d >= 3`, `alpha >= (d-1)/d`, small chi.
    Thm14SmallChi,
    Uncovered,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeLabel {
    pub regime: Regime,
    pub critical_p: f64,
}

impl RegimeLabel {
    pub fn is_covered(&self) -> bool {
        self.regime != Regime::Uncovered
    }
}

const REGIME_TOL: f64 = 1e-9;

pub fn classify_regime(params: &ModelParams) -> RegimeLabel {
    let (p, a, d) = (params.p, params.alpha, params.dim);
    let critical_p = critical_exponent(a, d);
    let regime = if (p - (1.0 + a)).abs() <= REGIME_TOL {
        Regime::Thm11
    } else if p > critical_p + REGIME_TOL
        && p < 1.0 + a - REGIME_TOL
        && a >= (1.0 + p) / 3.0 - REGIME_TOL
    {
        Regime::Thm12
    } else if (p - critical_p).abs() <= REGIME_TOL
        && d >= 3
        && a >= (d as f64 - 1.0) / d as f64 - REGIME_TOL
    {
        Regime::Thm14SmallChi
    } else {
        Regime::Uncovered
    };
    RegimeLabel { regime, critical_p }
}

/// `||u||_{p+1-alpha}`, used throughout the diagnostics.
pub fn energy_norm(u: &DensityField, params: &ModelParams) -> f64 {
    field_norm(u, NormKind::Lq(params.energy_exponent())).expect("p + 1 - alpha > 1")
}
