//! Physical parameters and the smooth cutoff used by the boundary damping.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Field, Grid, Parity};

/// Nodes required across the half-width of the ramp.
pub const MIN_RAMP_NODES: f64 = 16.0;
/// Suprema of profile quantities are taken on a grid this many times finer.
pub const OVERSAMPLE: usize = 4;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ParamError {
    #[error("{name} must be {requirement}, got {value}")]
    OutOfRange { name: &'static str, requirement: &'static str, value: f64 },
    #[error("damping width delta = {delta} must be smaller than the half-length L = {half_length}")]
    DeltaTooLarge { delta: f64, half_length: f64 },
    #[error("cutoff ramp is under-resolved: {nodes:.1} nodes across delta/2, need at least {MIN_RAMP_NODES}")]
    UnderResolved { nodes: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    pub g: f64,
    pub kappa: f64,
    pub h: f64,
    #[serde(rename = "L")]
    pub half_length: f64,
}

impl PhysicalParams {
    pub fn validate(&self) -> Result<(), ParamError> {
        positive("g", self.g)?;
        positive("h", self.h)?;
        positive("L", self.half_length)?;
        if !(self.kappa.is_finite() && self.kappa >= 0.0) {
            return Err(ParamError::OutOfRange { name: "kappa", requirement: "finite and >= 0", value: self.kappa });
        }
        Ok(())
    }

    /// Squared linear frequency g k tanh(kh) + kappa k^3 tanh(kh).
    pub fn omega_squared(&self, k: f64) -> f64 {
        (self.g + self.kappa * k * k) * k * (k * self.h).tanh()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlParams {
    pub delta: f64,
    pub lambda: f64,
}

impl ControlParams {
    pub fn validate(&self, physical: &PhysicalParams) -> Result<(), ParamError> {
        positive("delta", self.delta)?;
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(ParamError::OutOfRange { name: "lambda", requirement: "finite and >= 0", value: self.lambda });
        }
        if self.delta >= physical.half_length {
            return Err(ParamError::DeltaTooLarge { delta: self.delta, half_length: physical.half_length });
        }
        Ok(())
    }
}

fn positive(name: &'static str, value: f64) -> Result<(), ParamError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(ParamError::OutOfRange { name, requirement: "finite and > 0", value })
    }
}

/// exp(-1/s) and its first two derivatives, zero for s <= 0.
fn smooth_step_base(s: f64) -> [f64; 3] {
    // exp(-1/s) underflows long before s reaches this, and 1/s^4 would overflow
    if s <= 1.0 / 700.0 {
        return [0.0; 3];
    }
    let e = (-1.0 / s).exp();
    let s2 = s * s;
    [e, e / s2, e * (1.0 / (s2 * s2) - 2.0 / (s2 * s))]
}

/// r(s) = e(s) / (e(s) + e(1 - s)) with derivatives; 0 for s <= 0 and 1 for s >= 1.
fn smooth_step(s: f64) -> [f64; 3] {
    if s <= 0.0 {
        return [0.0; 3];
    }
    if s >= 1.0 {
        return [1.0, 0.0, 0.0];
    }
    let [a, a1, a2] = smooth_step_base(s);
    let [b, mut b1, b2] = smooth_step_base(1.0 - s);
    b1 = -b1;
    let den = a + b;
    let num = a1 * b - a * b1;
    let r = a / den;
    let r1 = num / (den * den);
    let r2 = (a2 * b - a * b2) / (den * den) - 2.0 * num * (a1 + b1) / (den * den * den);
    [r, r1, r2]
}

/// The even cutoff phi on [-L, L] with its first two derivatives.
///
/// phi = 1 on |x| <= L - delta, 0 on |x| >= L - delta/2, and smooth in between.
pub fn cutoff(x: f64, half_length: f64, delta: f64) -> [f64; 3] {
    let ax = x.abs();
    let scale = 2.0 / delta;
    let s = (ax - (half_length - delta)) * scale;
    let [r, r1, r2] = smooth_step(s);
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    [1.0 - r, -sign * r1 * scale, -r2 * scale * scale]
}

/// Pointwise values of the multiplier m = x phi and its relatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfilePoint {
    pub phi: f64,
    pub m: f64,
    pub m_x: f64,
    pub m_xx: f64,
}

impl ProfilePoint {
    pub fn at(x: f64, half_length: f64, delta: f64) -> Self {
        let [phi, phi1, phi2] = cutoff(x, half_length, delta);
        ProfilePoint { phi, m: x * phi, m_x: phi + x * phi1, m_xx: 2.0 * phi1 + x * phi2 }
    }

    pub fn chi(&self) -> f64 {
        1.0 - self.m_x
    }
}

/// Suprema of profile quantities over [-L, L], taken on an oversampled grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProfileSuprema {
    pub m_abs: f64,
    pub m_xx_abs: f64,
    pub chi: f64,
    pub chi_x_abs: f64,
    /// sup (1 - m_x)^2
    pub one_minus_m_x_sq: f64,
    /// sup (5/4 - m_x/2)^2
    pub five_quarters_sq: f64,
    pub m_x_max: f64,
    pub m_x_min: f64,
}

/// The damping profile sampled on a grid.
#[derive(Debug, Clone)]
pub struct CutoffProfile {
    pub delta: f64,
    pub half_length: f64,
    pub phi: Field,
    pub m: Field,
    pub m_x: Field,
    pub m_xx: Field,
    pub chi: Field,
    pub chi_x: Field,
    pub sup: ProfileSuprema,
}

pub fn build_cutoff(physical: &PhysicalParams, delta: f64, grid: &Grid) -> Result<CutoffProfile, ParamError> {
    physical.validate()?;
    positive("delta", delta)?;
    let half_length = physical.half_length;
    if delta >= half_length {
        return Err(ParamError::DeltaTooLarge { delta, half_length });
    }
    let nodes = 0.5 * delta / grid.dx();
    if nodes < MIN_RAMP_NODES {
        return Err(ParamError::UnderResolved { nodes });
    }
    let points: Vec<ProfilePoint> =
        grid.nodes().iter().map(|&x| ProfilePoint::at(x, half_length, delta)).collect();
    let collect = |f: fn(&ProfilePoint) -> f64, parity| Field::new(points.iter().map(f).collect(), parity);
    Ok(CutoffProfile {
        delta,
        half_length,
        phi: collect(|p| p.phi, Parity::Even),
        m: collect(|p| p.m, Parity::Odd),
        m_x: collect(|p| p.m_x, Parity::Even),
        m_xx: collect(|p| p.m_xx, Parity::Odd),
        chi: collect(|p| p.chi(), Parity::Even),
        chi_x: collect(|p| -p.m_xx, Parity::Odd),
        sup: suprema(half_length, delta, OVERSAMPLE * grid.len()),
    })
}

fn suprema(half_length: f64, delta: f64, samples: usize) -> ProfileSuprema {
    let dx = 2.0 * half_length / samples as f64;
    let mut sup = ProfileSuprema {
        m_abs: 0.0,
        m_xx_abs: 0.0,
        chi: f64::NEG_INFINITY,
        chi_x_abs: 0.0,
        one_minus_m_x_sq: 0.0,
        five_quarters_sq: 0.0,
        m_x_max: f64::NEG_INFINITY,
        m_x_min: f64::INFINITY,
    };
    for j in 0..=samples {
        let p = ProfilePoint::at(-half_length + dx * j as f64, half_length, delta);
        sup.m_abs = sup.m_abs.max(p.m.abs());
        sup.m_xx_abs = sup.m_xx_abs.max(p.m_xx.abs());
        sup.chi = sup.chi.max(p.chi());
        sup.one_minus_m_x_sq = sup.one_minus_m_x_sq.max(p.chi().powi(2));
        sup.five_quarters_sq = sup.five_quarters_sq.max((1.25 - 0.5 * p.m_x).powi(2));
        sup.m_x_max = sup.m_x_max.max(p.m_x);
        sup.m_x_min = sup.m_x_min.min(p.m_x);
    }
    sup.chi_x_abs = sup.m_xx_abs;
    sup
}

impl CutoffProfile {
    /// g - kappa sup m_xx^2; the surface-tension term is controlled when this is >= 0.
    pub fn tension_margin(&self, physical: &PhysicalParams) -> f64 {
        physical.g - physical.kappa * self.sup.m_xx_abs.powi(2)
    }

    /// min over the grid of L chi - |x - m|.
    pub fn multiplier_domination_margin(&self, grid: &Grid) -> f64 {
        grid.nodes()
            .iter()
            .zip(self.chi.values.iter().zip(&self.m.values))
            .map(|(&x, (&chi, &m))| self.half_length * chi - (x - m).abs())
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest kappa for which the tension margin stays non-negative.
    pub fn max_kappa(&self, g: f64) -> f64 {
        g / self.sup.m_xx_abs.powi(2)
    }
}

pub fn check_tension_compatibility(physical: &PhysicalParams, profile: &CutoffProfile) -> f64 {
    profile.tension_margin(physical)
}

pub fn check_multiplier_domination(profile: &CutoffProfile, grid: &Grid) -> f64 {
    profile.multiplier_domination_margin(grid)
}
