//! Energies, multiplier fields and the hypothesis monitor.

use serde::Serialize;

use crate::dtn::InteriorField;
use crate::grid::{Field, Grid, Parity};
use crate::params::{CutoffProfile, PhysicalParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyBreakdown {
    /// (1/2) int psi G(eta) psi
    pub kinetic: f64,
    /// (g/2) int eta^2
    pub potential_grav: f64,
    /// kappa int eta_x^2 / (1 + sqrt(1 + eta_x^2))
    pub potential_surf: f64,
    pub total: f64,
    /// total with the surface term replaced by kappa int eta_x^2 / sqrt(1 + eta_x^2)
    pub total_tilde: f64,
    /// (1/2) of the fluid integral of |grad phi|^2, when the interior is available
    pub kinetic_interior: Option<f64>,
}

impl EnergyBreakdown {
    pub fn compute(
        grid: &Grid,
        params: &PhysicalParams,
        eta: &Field,
        psi: &Field,
        g_psi: &Field,
        interior: Option<&InteriorField>,
    ) -> Self {
        let eta_x = grid.derivative(&eta.values);
        Self::from_parts(grid, params, eta, &eta_x, psi, g_psi, interior)
    }

    pub(crate) fn from_parts(
        grid: &Grid,
        params: &PhysicalParams,
        eta: &Field,
        eta_x: &[f64],
        psi: &Field,
        g_psi: &Field,
        interior: Option<&InteriorField>,
    ) -> Self {
        let kinetic = 0.5 * grid.inner(&psi.values, &g_psi.values);
        let potential_grav = 0.5 * params.g * grid.inner(&eta.values, &eta.values);
        let (surf, surf_tilde) = eta_x.iter().fold((0.0, 0.0), |(a, b), &q| {
            let root = (1.0 + q * q).sqrt();
            (a + q * q / (1.0 + root), b + q * q / root)
        });
        let potential_surf = params.kappa * grid.dx() * surf;
        let tilde_surf = params.kappa * grid.dx() * surf_tilde;
        EnergyBreakdown {
            kinetic,
            potential_grav,
            potential_surf,
            total: kinetic + potential_grav + potential_surf,
            total_tilde: kinetic + potential_grav + tilde_surf,
            kinetic_interior: interior.map(InteriorField::kinetic_energy),
        }
    }
}

/// Energy of the half tank 0 < x < L. For even states this is half the total.
pub fn half_domain_energy(grid: &Grid, params: &PhysicalParams, eta: &Field, psi: &Field, g_psi: &Field) -> f64 {
    let n = grid.len();
    let eta_x = grid.derivative(&eta.values);
    // nodes N/2 ..= N, node N being the periodic image of node 0
    let integrate = |f: &dyn Fn(usize) -> f64| {
        let inner: f64 = (n / 2 + 1..n).map(f).sum();
        grid.dx() * (inner + 0.5 * (f(n / 2) + f(0)))
    };
    let density = |j: usize| {
        let q = eta_x[j];
        0.5 * params.g * eta.values[j].powi(2)
            + params.kappa * q * q / (1.0 + (1.0 + q * q).sqrt())
            + 0.5 * psi.values[j] * g_psi.values[j]
    };
    integrate(&density)
}

/// Fields built from the multiplier m that enter the decay estimate.
#[derive(Debug, Clone)]
pub struct MultiplierFields {
    /// d/dx(m eta) + (3/2)(1 - m_x) eta - eta/4
    pub zeta: Field,
    /// (m - x) eta_x + (9/4) eta - (1/2) m_x eta
    pub rho: Field,
    pub rho_x: Field,
    /// int (1 - m_x) eta
    pub nu: f64,
    /// 3 nu / (8 L)
    pub beta: f64,
    /// psi minus its mean
    pub psi_tilde: Field,
}

impl MultiplierFields {
    pub fn compute(grid: &Grid, profile: &CutoffProfile, eta: &Field, psi: &Field) -> Self {
        let eta_x = grid.derivative(&eta.values);
        let eta_xx = grid.second_derivative(&eta.values);
        let x = grid.nodes();
        let (m, m_x, m_xx, chi) = (&profile.m.values, &profile.m_x.values, &profile.m_xx.values, &profile.chi.values);
        let e = &eta.values;
        let n = grid.len();
        let zeta = (0..n)
            .map(|j| m_x[j] * e[j] + m[j] * eta_x[j] + 1.5 * chi[j] * e[j] - 0.25 * e[j])
            .collect();
        let rho = (0..n).map(|j| (m[j] - x[j]) * eta_x[j] + 2.25 * e[j] - 0.5 * m_x[j] * e[j]).collect();
        // rho is even but x is not periodic; at x = -L this is the one-sided value from
        // the right, which has the same magnitude as the one from the left at x = L
        let rho_x = (0..n)
            .map(|j| {
                (m_x[j] - 1.0) * eta_x[j] + (m[j] - x[j]) * eta_xx[j] + 2.25 * eta_x[j]
                    - 0.5 * m_xx[j] * e[j]
                    - 0.5 * m_x[j] * eta_x[j]
            })
            .collect();
        let nu = grid.inner(chi, e);
        let mean = grid.mean(&psi.values);
        MultiplierFields {
            zeta: Field::new(zeta, Parity::Even),
            rho: Field::new(rho, Parity::Even),
            rho_x: Field::new(rho_x, Parity::None),
            nu,
            beta: 3.0 * nu / (8.0 * grid.half_length()),
            psi_tilde: psi.shift(-mean),
        }
    }
}

/// Bit positions in [`AssumptionReport::violations`].
pub mod flag {
    pub const RHO: u32 = 1;
    pub const RHO_X: u32 = 2;
    pub const NU: u32 = 4;
    pub const MX_ETAX2: u32 = 8;
    pub const ETA_X: u32 = 16;
    pub const MIN_ETA: u32 = 32;
    pub const TENSION: u32 = 64;
    pub const M_X: u32 = 128;
}

/// Margins of the pointwise hypotheses of the decay theorem; each must be >= 0,
/// and `rho_x` strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AssumptionReport {
    /// min rho + h/4
    pub rho: f64,
    /// 1/4 - max |rho_x|
    pub rho_x: f64,
    /// hL/3 - nu
    pub nu: f64,
    /// 2 - max |m_x| eta_x^2
    pub mx_etax2: f64,
    /// 1 - max |eta_x|
    pub eta_x: f64,
    /// min eta + h/2
    pub min_eta: f64,
    /// g - kappa sup m_xx^2
    pub tension: f64,
    /// 1 - sup m_x
    pub m_x: f64,
}

impl AssumptionReport {
    pub fn compute(
        grid: &Grid,
        params: &PhysicalParams,
        profile: &CutoffProfile,
        eta: &Field,
        fields: &MultiplierFields,
    ) -> Self {
        let eta_x = grid.derivative(&eta.values);
        let h = params.h;
        let mx_etax2 = profile
            .m_x
            .values
            .iter()
            .zip(&eta_x)
            .map(|(mx, ex)| mx.abs() * ex * ex)
            .fold(0.0, f64::max);
        AssumptionReport {
            rho: fields.rho.min() + 0.25 * h,
            rho_x: 0.25 - fields.rho_x.max_abs(),
            nu: h * grid.half_length() / 3.0 - fields.nu,
            mx_etax2: 2.0 - mx_etax2,
            eta_x: 1.0 - eta_x.iter().fold(0.0, |m: f64, v| m.max(v.abs())),
            min_eta: eta.min() + 0.5 * h,
            tension: profile.tension_margin(params),
            m_x: 1.0 - profile.sup.m_x_max,
        }
    }

    /// Bit mask of violated hypotheses, zero when all hold.
    pub fn violations(&self) -> u32 {
        let mut bits = 0;
        let checks = [
            (self.rho >= 0.0, flag::RHO),
            (self.rho_x > 0.0, flag::RHO_X),
            (self.nu >= 0.0, flag::NU),
            (self.mx_etax2 >= 0.0, flag::MX_ETAX2),
            (self.eta_x >= 0.0, flag::ETA_X),
            (self.min_eta >= 0.0, flag::MIN_ETA),
            (self.tension >= 0.0, flag::TENSION),
            (self.m_x >= 0.0, flag::M_X),
        ];
        for (ok, bit) in checks {
            if !ok {
                bits |= bit;
            }
        }
        bits
    }

    pub fn all_hold(&self) -> bool {
        self.violations() == 0
    }

    /// Hypotheses that depend on the state only, ignoring the parameter-level ones.
    pub fn state_hypotheses_hold(&self) -> bool {
        self.violations() & !(flag::TENSION | flag::M_X) == 0
    }
}
