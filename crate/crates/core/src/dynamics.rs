//! Zakharov–Craig–Sulem evolution with boundary feedback damping.
//!
//! eta_t = G(eta) psi
//! psi_t = -g eta - N(eta) psi + kappa H(eta) - P_ext
//!
//! The linear part is integrated exactly in the complex amplitudes
//! w = sqrt(s) eta_hat +/- i sqrt(c) psi_hat (c = k tanh kh, s = g + kappa k^2) by
//! fourth-order exponential time differencing (Cox–Matthews).

use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::dtn::{DtnError, DtnSolver};
use crate::energy::{AssumptionReport, EnergyBreakdown, MultiplierFields};
use crate::grid::{Field, Grid, GridError, Parity, Projection};
use crate::params::{build_cutoff, ControlParams, CutoffProfile, ParamError, PhysicalParams};

/// Steepness beyond which a run is declared blown up.
pub const MAX_SLOPE: f64 = 5.0;
/// A run also stops when min eta gets within this fraction of h from the bottom.
pub const BOTTOM_CLEARANCE: f64 = 0.01;
/// Fraction of the explicit stability limit used for the damping term.
const DAMPING_STABILITY: f64 = 2.5;
/// Fraction of the inverse of the fastest retained linear frequency.
const WAVE_CFL: f64 = 0.5;
/// Output samples per period of the fastest retained mode.
const SAMPLES_PER_PERIOD: f64 = 8.0;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("blow-up at t = {t}: {reason}")]
    BlowUp { t: f64, reason: String, state: Box<SurfaceState> },
    #[error(transparent)]
    Dtn(#[from] DtnError),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("invalid simulation setup: {0}")]
    Setup(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceState {
    pub t: f64,
    pub eta: Field,
    pub psi: Field,
}

impl SurfaceState {
    /// eta = a cos(k_mode x), psi = 0.
    pub fn standing_mode(grid: &Grid, mode: usize, amplitude: f64) -> Self {
        let k = grid.wavenumbers()[mode];
        SurfaceState {
            t: 0.0,
            eta: grid.from_fn(|x| amplitude * (k * x).cos(), Parity::Even),
            psi: Field::zeros(grid.len()),
        }
    }
}

/// Right-hand side of the evolution together with by-products used by diagnostics.
#[derive(Debug, Clone)]
pub struct RhsEval {
    pub d_eta: Field,
    pub d_psi: Field,
    pub g_psi: Field,
    /// Pressure actually applied, mean free.
    pub p_ext: Field,
    /// Spatially constant part p(t) = -mean(lambda chi G psi).
    pub p_of_t: f64,
    /// lambda int chi (G psi)^2
    pub dissipation_rate: f64,
    pub iterations: usize,
}

/// H(eta) = d/dx (eta_x / sqrt(1 + eta_x^2)), dealiased.
pub fn curvature(grid: &Grid, eta: &Field) -> Field {
    let eta_x = grid.derivative(&eta.values);
    let slope: Vec<f64> = eta_x.iter().map(|q| q / (1.0 + q * q).sqrt()).collect();
    let h = grid.dealias(&grid.derivative(&slope));
    Field::new(h, eta.parity)
}

/// N(eta) psi = psi_x^2/2 - (G psi + eta_x psi_x)^2 / (2 (1 + eta_x^2)), evaluated pointwise.
pub fn nonlinear_term_pointwise(grid: &Grid, eta: &Field, psi: &Field, g_psi: &Field) -> Field {
    let eta_x = grid.derivative(&eta.values);
    let psi_x = grid.derivative(&psi.values);
    let values = (0..grid.len())
        .map(|j| {
            let (ex, px) = (eta_x[j], psi_x[j]);
            let b = g_psi.values[j] + ex * px;
            0.5 * px * px - 0.5 * b * b / (1.0 + ex * ex)
        })
        .collect();
    Field::new(values, Parity::Even.product(eta.parity).product(psi.parity).product(Parity::Even))
}

/// Dealiased N(eta) psi.
pub fn nonlinear_term(grid: &Grid, eta: &Field, psi: &Field, g_psi: &Field) -> Field {
    let raw = nonlinear_term_pointwise(grid, eta, psi, g_psi);
    Field::new(grid.dealias(&raw.values), raw.parity)
}

/// P_ext = lambda chi eta_t - mean(lambda chi eta_t), returned with p(t) = -mean(lambda chi eta_t).
pub fn pressure_feedback(grid: &Grid, profile: &CutoffProfile, lambda: f64, d_eta: &Field) -> (Field, f64) {
    let raw: Vec<f64> = profile.chi.values.iter().zip(&d_eta.values).map(|(c, g)| lambda * c * g).collect();
    let p_of_t = -grid.mean(&raw);
    let p_ext = raw.iter().map(|v| v + p_of_t).collect();
    (Field::new(p_ext, d_eta.parity), p_of_t)
}

#[derive(Debug, Clone)]
pub struct Damping {
    pub profile: CutoffProfile,
    pub lambda: f64,
}

/// Everything needed to evaluate the right-hand side.
#[derive(Debug)]
pub struct WaveModel {
    pub grid: Grid,
    pub params: PhysicalParams,
    pub solver: DtnSolver,
    pub damping: Option<Damping>,
}

impl WaveModel {
    pub fn new(grid: &Grid, params: PhysicalParams, degree: usize, damping: Option<Damping>) -> Result<Self, SimError> {
        params.validate()?;
        let solver = DtnSolver::new(grid, params.h, degree)?;
        Ok(WaveModel { grid: grid.clone(), params, solver, damping })
    }

    pub fn rhs(&mut self, eta: &Field, psi: &Field) -> Result<RhsEval, DtnError> {
        let dtn = self.solver.apply(eta, psi)?;
        Ok(self.assemble(eta, psi, dtn.g_psi, dtn.iterations))
    }

    /// Right-hand side given G(eta) psi, e.g. from an interior solve.
    pub fn assemble(&self, eta: &Field, psi: &Field, g_psi: Field, iterations: usize) -> RhsEval {
        let grid = &self.grid;
        let n_term = nonlinear_term(grid, eta, psi, &g_psi);
        let h_term = curvature(grid, eta);
        let (p_ext, p_of_t, dissipation_rate) = match &self.damping {
            Some(d) => {
                let (p, p_of_t) = pressure_feedback(grid, &d.profile, d.lambda, &g_psi);
                let rate = d.lambda * grid.dx()
                    * d.profile.chi.values.iter().zip(&g_psi.values).map(|(c, g)| c * g * g).sum::<f64>();
                // only the retained modes are damped
                (Field::new(grid.dealias(&p.values), p.parity), p_of_t, rate)
            }
            None => (Field::zeros(grid.len()), 0.0, 0.0),
        };
        let (g, kappa) = (self.params.g, self.params.kappa);
        let d_psi = (0..grid.len())
            .map(|j| -g * eta.values[j] - n_term.values[j] + kappa * h_term.values[j] - p_ext.values[j])
            .collect();
        RhsEval {
            d_eta: g_psi.clone(),
            d_psi: Field::new(d_psi, eta.parity.product(Parity::Even)),
            g_psi,
            p_ext,
            p_of_t,
            dissipation_rate,
            iterations,
        }
    }

    /// Largest linear frequency among the modes kept by the dealiasing.
    pub fn max_retained_frequency(&self) -> f64 {
        let k = self.grid.wavenumbers()[self.grid.dealias_cutoff()];
        self.params.omega_squared(k).sqrt()
    }

    /// Spectral radius of psi -> lambda Pi(chi G0 psi), the stiff part of the damping.
    pub fn damping_spectral_radius(&self) -> f64 {
        let Some(d) = &self.damping else { return 0.0 };
        if d.lambda == 0.0 {
            return 0.0;
        }
        let grid = &self.grid;
        let h = self.params.h;
        let cutoff = grid.dealias_cutoff();
        let flat = |v: &[f64]| {
            grid.apply_symbol(v, |m, k| {
                let s = if m <= cutoff { k * (k * h).tanh() } else { 0.0 };
                Complex64::new(s, 0.0)
            })
        };
        let mut v: Vec<f64> = (0..grid.len()).map(|j| 1.0 + (0.7 * j as f64).sin()).collect();
        let mut estimate = 0.0;
        for _ in 0..400 {
            let g = flat(&v);
            let w: Vec<f64> = g.iter().zip(&d.profile.chi.values).map(|(a, c)| c * a).collect();
            let mut w = grid.dealias(&w);
            let mean = grid.mean(&w);
            w.iter_mut().for_each(|x| *x -= mean);
            let norm_w = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            let norm_v = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            estimate = norm_w / norm_v;
            v = w.iter().map(|x| x / norm_w).collect();
        }
        d.lambda * estimate
    }

    /// Default step: the smaller of the wave limit and the damping stability limit.
    pub fn stable_dt(&self) -> f64 {
        let wave = WAVE_CFL / self.max_retained_frequency();
        let rho = self.damping_spectral_radius();
        if rho > 0.0 {
            wave.min(DAMPING_STABILITY / rho)
        } else {
            wave
        }
    }
}

/// phi-function coefficients of the scheme for one value of z = lambda dt.
#[derive(Debug, Clone, Copy)]
struct EtdCoefficients {
    e: Complex64,
    e2: Complex64,
    q: Complex64,
    f1: Complex64,
    f2: Complex64,
    f3: Complex64,
}

impl EtdCoefficients {
    fn new(z: Complex64, dt: f64) -> Self {
        let direct = |z: Complex64| {
            let ez = z.exp();
            let z3 = z * z * z;
            (
                ((z * 0.5).exp() - 1.0) / z,
                (-4.0 - z + ez * (4.0 - 3.0 * z + z * z)) / z3,
                (2.0 + z + ez * (z - 2.0)) / z3,
                (-4.0 - 3.0 * z - z * z + ez * (4.0 - z)) / z3,
            )
        };
        let (q, f1, f2, f3) = if z.norm() >= 1.0 {
            direct(z)
        } else {
            // average over a unit circle around z avoids the cancellation near z = 0
            const POINTS: usize = 32;
            let mut acc = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
            for j in 0..POINTS {
                let theta = 2.0 * std::f64::consts::PI * (j as f64 + 0.5) / POINTS as f64;
                let (a, b, c, d) = direct(z + Complex64::from_polar(1.0, theta));
                acc = (acc.0 + a, acc.1 + b, acc.2 + c, acc.3 + d);
            }
            let s = 1.0 / POINTS as f64;
            (acc.0 * s, acc.1 * s, acc.2 * s, acc.3 * s)
        };
        EtdCoefficients { e: z.exp(), e2: (z * 0.5).exp(), q: q * dt, f1: f1 * dt, f2: f2 * dt, f3: f3 * dt }
    }

    /// The limit z -> 0, i.e. classical RK4.
    fn zero(dt: f64) -> Self {
        let one = Complex64::new(1.0, 0.0);
        EtdCoefficients { e: one, e2: one, q: one * (dt / 2.0), f1: one * (dt / 6.0), f2: one * (dt / 6.0), f3: one * (dt / 6.0) }
    }
}

/// Fourth-order exponential integrator for a fixed step.
#[derive(Debug, Clone)]
pub struct Etdrk4 {
    pub dt: f64,
    c: Vec<f64>,
    s: Vec<f64>,
    coeffs: Vec<EtdCoefficients>,
}

/// Complex amplitudes w+ and w- of every mode.
#[derive(Debug, Clone)]
struct Modal {
    plus: Vec<Complex64>,
    minus: Vec<Complex64>,
}

pub struct StepOutput {
    pub state: SurfaceState,
    /// Integral over the step of lambda int chi (G psi)^2, by the stage quadrature.
    pub dissipated: f64,
    pub solver_iterations: usize,
}

impl Etdrk4 {
    pub fn new(grid: &Grid, params: &PhysicalParams, dt: f64) -> Self {
        let k = grid.wavenumbers();
        let c: Vec<f64> = k.iter().map(|k| k * (k * params.h).tanh()).collect();
        let s: Vec<f64> = k.iter().map(|k| params.g + params.kappa * k * k).collect();
        let coeffs = (0..k.len())
            .map(|m| {
                if m == 0 {
                    EtdCoefficients::zero(dt)
                } else {
                    let omega = (c[m] * s[m]).sqrt();
                    EtdCoefficients::new(Complex64::new(0.0, -omega * dt), dt)
                }
            })
            .collect();
        Etdrk4 { dt, c, s, coeffs }
    }

    fn to_modal(&self, eta_hat: &[Complex64], psi_hat: &[Complex64]) -> Modal {
        let i = Complex64::new(0.0, 1.0);
        let mut plus = Vec::with_capacity(eta_hat.len());
        let mut minus = Vec::with_capacity(eta_hat.len());
        for m in 0..eta_hat.len() {
            if m == 0 {
                plus.push(eta_hat[0]);
                minus.push(psi_hat[0]);
            } else {
                let (rs, rc) = (self.s[m].sqrt(), self.c[m].sqrt());
                plus.push(eta_hat[m] * rs + i * psi_hat[m] * rc);
                minus.push(eta_hat[m] * rs - i * psi_hat[m] * rc);
            }
        }
        Modal { plus, minus }
    }

    fn from_modal(&self, w: &Modal) -> (Vec<Complex64>, Vec<Complex64>) {
        let i = Complex64::new(0.0, 1.0);
        let n = w.plus.len();
        let mut eta = Vec::with_capacity(n);
        let mut psi = Vec::with_capacity(n);
        for m in 0..n {
            if m == 0 {
                eta.push(w.plus[0]);
                psi.push(w.minus[0]);
            } else {
                let (rs, rc) = (self.s[m].sqrt(), self.c[m].sqrt());
                eta.push((w.plus[m] + w.minus[m]) / (2.0 * rs));
                psi.push((w.plus[m] - w.minus[m]) / (2.0 * i * rc));
            }
        }
        (eta, psi)
    }

    /// Nonlinear remainder F(u) - L u in modal variables.
    fn remainder(&self, grid: &Grid, eval: &RhsEval, eta_hat: &[Complex64], psi_hat: &[Complex64]) -> Modal {
        let f_eta = grid.forward(&eval.d_eta.values);
        let f_psi = grid.forward(&eval.d_psi.values);
        let n_eta: Vec<Complex64> = (0..f_eta.len()).map(|m| f_eta[m] - psi_hat[m] * self.c[m]).collect();
        let n_psi: Vec<Complex64> = (0..f_psi.len()).map(|m| f_psi[m] + eta_hat[m] * self.s[m]).collect();
        self.to_modal(&n_eta, &n_psi)
    }

    fn stage(&self, grid: &Grid, w: &Modal, parity: Parity) -> (Field, Field, Vec<Complex64>, Vec<Complex64>) {
        let (eh, ph) = self.from_modal(w);
        let eta = Field::new(grid.inverse(&eh), parity);
        let psi = Field::new(grid.inverse(&ph), parity);
        (eta, psi, eh, ph)
    }

    /// Advances `state` by one step; `first` must be the right-hand side at `state`.
    pub fn step(&self, model: &mut WaveModel, state: &SurfaceState, first: &RhsEval) -> Result<StepOutput, DtnError> {
        let grid = model.grid.clone();
        let parity = state.eta.parity.product(Parity::Even);
        let eh = grid.forward(&state.eta.values);
        let ph = grid.forward(&state.psi.values);
        let u = self.to_modal(&eh, &ph);
        let nu = self.remainder(&grid, first, &eh, &ph);
        let cf = &self.coeffs;
        let modes = cf.len();
        // lambda- coefficients are the conjugates of the lambda+ ones
        let combine = |f: &dyn Fn(&EtdCoefficients, bool, usize) -> Complex64| -> Modal {
            Modal {
                plus: (0..modes).map(|m| f(&cf[m], false, m)).collect(),
                minus: (0..modes).map(|m| f(&cf[m], true, m)).collect(),
            }
        };
        let pick = |c: Complex64, conj: bool, m: usize| if conj && m > 0 { c.conj() } else { c };
        let get = |w: &Modal, conj: bool, m: usize| if conj { w.minus[m] } else { w.plus[m] };

        let a = combine(&|c, conj, m| pick(c.e2, conj, m) * get(&u, conj, m) + pick(c.q, conj, m) * get(&nu, conj, m));
        let (ea, pa, eah, pah) = self.stage(&grid, &a, parity);
        let ra = model.rhs(&ea, &pa)?;
        let na = self.remainder(&grid, &ra, &eah, &pah);

        let b = combine(&|c, conj, m| pick(c.e2, conj, m) * get(&u, conj, m) + pick(c.q, conj, m) * get(&na, conj, m));
        let (eb, pb, ebh, pbh) = self.stage(&grid, &b, parity);
        let rb = model.rhs(&eb, &pb)?;
        let nb = self.remainder(&grid, &rb, &ebh, &pbh);

        let c = combine(&|c, conj, m| {
            pick(c.e2, conj, m) * get(&a, conj, m)
                + pick(c.q, conj, m) * (2.0 * get(&nb, conj, m) - get(&nu, conj, m))
        });
        let (ec, pc, ech, pch) = self.stage(&grid, &c, parity);
        let rc = model.rhs(&ec, &pc)?;
        let nc = self.remainder(&grid, &rc, &ech, &pch);

        let next = combine(&|c, conj, m| {
            pick(c.e, conj, m) * get(&u, conj, m)
                + pick(c.f1, conj, m) * get(&nu, conj, m)
                + 2.0 * pick(c.f2, conj, m) * (get(&na, conj, m) + get(&nb, conj, m))
                + pick(c.f3, conj, m) * get(&nc, conj, m)
        });
        let (eta, psi, _, _) = self.stage(&grid, &next, parity);
        let eta = grid.project(&eta, Projection { zero_mean: true, ..Projection::EVEN });
        let psi = grid.project(&psi, Projection::EVEN);
        let dissipated = self.dt / 6.0
            * (first.dissipation_rate + 2.0 * ra.dissipation_rate + 2.0 * rb.dissipation_rate + rc.dissipation_rate);
        Ok(StepOutput {
            state: SurfaceState { t: state.t + self.dt, eta, psi },
            dissipated,
            solver_iterations: first.iterations + ra.iterations + rb.iterations + rc.iterations,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialData {
    /// eta = amplitude cos(pi mode x / L), psi = 0; amplitude in units of h.
    Mode { mode: usize, amplitude: f64 },
    State(SurfaceState),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub physical: PhysicalParams,
    pub control: ControlParams,
    pub damping: bool,
    pub n: usize,
    pub degree: usize,
    pub t_end: f64,
    /// Upper bound on the step; the stability limits may lower it.
    pub dt: Option<f64>,
    pub output_every: Option<usize>,
    pub initial: InitialData,
    pub monitor: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SampleSummary {
    pub t: f64,
    pub energy: EnergyBreakdown,
    pub dissipation_rate: f64,
    pub dissipated: f64,
    pub min_eta: f64,
    pub max_abs_eta_x: f64,
    pub assumptions: Option<AssumptionReport>,
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub state: SurfaceState,
    pub summary: SampleSummary,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub dt: f64,
    pub steps: usize,
    pub output_every: usize,
    pub solver_iterations: usize,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.summary.t).collect()
    }

    pub fn energies(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.summary.energy.total).collect()
    }

    pub fn last(&self) -> &Sample {
        self.samples.last().expect("trajectory has at least one sample")
    }
}

/// A configured run: grid, model, integrator and monitor profile.
pub struct Simulation {
    pub grid: Grid,
    pub model: WaveModel,
    pub integrator: Etdrk4,
    pub monitor_profile: Option<CutoffProfile>,
    pub output_every: usize,
    config: SimConfig,
}

impl Simulation {
    pub fn new(config: &SimConfig) -> Result<Self, SimError> {
        config.physical.validate()?;
        config.control.validate(&config.physical)?;
        if !(config.t_end.is_finite() && config.t_end >= 0.0) {
            return Err(SimError::Setup(format!("end time must be finite and >= 0, got {}", config.t_end)));
        }
        let grid = Grid::new(config.n, config.physical.half_length)?;
        let profile = build_cutoff(&config.physical, config.control.delta, &grid);
        let damping = if config.damping {
            Some(Damping { profile: profile.clone()?, lambda: config.control.lambda })
        } else {
            None
        };
        let model = WaveModel::new(&grid, config.physical, config.degree, damping)?;
        let mut dt = model.stable_dt();
        if let Some(user) = config.dt {
            if !(user.is_finite() && user > 0.0) {
                return Err(SimError::Setup(format!("dt must be positive, got {user}")));
            }
            dt = dt.min(user);
        }
        let period = 2.0 * std::f64::consts::PI / model.max_retained_frequency();
        let output_every =
            config.output_every.unwrap_or_else(|| ((period / SAMPLES_PER_PERIOD) / dt).floor().max(1.0) as usize);
        if output_every == 0 {
            return Err(SimError::Setup("output_every must be at least 1".into()));
        }
        let integrator = Etdrk4::new(&grid, &config.physical, dt);
        let monitor_profile = if config.monitor { profile.ok() } else { None };
        Ok(Simulation { grid, model, integrator, monitor_profile, output_every, config: config.clone() })
    }

    pub fn dt(&self) -> f64 {
        self.integrator.dt
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn initial_state(&self) -> Result<SurfaceState, SimError> {
        match &self.config.initial {
            InitialData::Mode { mode, amplitude } => {
                if *mode == 0 || *mode > self.grid.dealias_cutoff() {
                    return Err(SimError::Setup(format!("initial mode {mode} is not a retained nonzero mode")));
                }
                Ok(SurfaceState::standing_mode(&self.grid, *mode, amplitude * self.config.physical.h))
            }
            InitialData::State(s) => {
                self.grid.check(&s.eta.values)?;
                self.grid.check(&s.psi.values)?;
                Ok(s.clone())
            }
        }
    }

    fn summarize(&self, state: &SurfaceState, eval: &RhsEval, dissipated: f64) -> SampleSummary {
        let grid = &self.grid;
        let eta_x = grid.derivative(&state.eta.values);
        let energy = EnergyBreakdown::from_parts(grid, &self.model.params, &state.eta, &eta_x, &state.psi, &eval.g_psi, None);
        let assumptions = self.monitor_profile.as_ref().map(|profile| {
            let fields = MultiplierFields::compute(grid, profile, &state.eta, &state.psi);
            AssumptionReport::compute(grid, &self.model.params, profile, &state.eta, &fields)
        });
        SampleSummary {
            t: state.t,
            energy,
            dissipation_rate: eval.dissipation_rate,
            dissipated,
            min_eta: state.eta.min(),
            max_abs_eta_x: eta_x.iter().fold(0.0, |m: f64, v| m.max(v.abs())),
            assumptions,
        }
    }

    fn check_blow_up(&self, state: &SurfaceState) -> Result<(), SimError> {
        let h = self.model.params.h;
        let slope = self.grid.derivative(&state.eta.values).iter().fold(0.0, |m: f64, v| m.max(v.abs()));
        let min_eta = state.eta.min();
        let reason = if !slope.is_finite() || slope > MAX_SLOPE {
            format!("max |eta_x| = {slope} exceeds {MAX_SLOPE}")
        } else if !(min_eta > -h + BOTTOM_CLEARANCE * h) {
            format!("min eta = {min_eta} is within {} of the bottom", BOTTOM_CLEARANCE * h)
        } else {
            return Ok(());
        };
        Err(SimError::BlowUp { t: state.t, reason, state: Box::new(state.clone()) })
    }

    /// Integrates from the configured initial data to the configured end time.
    pub fn run(&mut self) -> Result<Trajectory, SimError> {
        let start = self.initial_state()?;
        let span = self.config.t_end - start.t;
        if span < 0.0 {
            return Err(SimError::Setup(format!("end time {} precedes start time {}", self.config.t_end, start.t)));
        }
        let steps = (span / self.dt() - 1e-9).ceil().max(0.0) as usize;
        if steps > 0 && (steps as f64 * self.dt() - span).abs() > 1e-9 * span.max(1.0) {
            // land exactly on t_end with a uniform step
            self.integrator = Etdrk4::new(&self.grid, &self.config.physical, span / steps as f64);
        }
        self.check_blow_up(&start)?;
        let t0 = start.t;
        let mut state = start;
        let mut dissipated = 0.0;
        let mut samples = Vec::new();
        let mut iterations = 0;
        for step in 0..steps {
            let eval = self.model.rhs(&state.eta, &state.psi)?;
            if step % self.output_every == 0 {
                let summary = self.summarize(&state, &eval, dissipated);
                samples.push(Sample { state: state.clone(), summary });
            }
            let out = self.integrator.step(&mut self.model, &state, &eval)?;
            iterations += out.solver_iterations;
            dissipated += out.dissipated;
            state = out.state;
            state.t = t0 + (step + 1) as f64 * self.integrator.dt;
            self.check_blow_up(&state)?;
        }
        let eval = self.model.rhs(&state.eta, &state.psi)?;
        let summary = self.summarize(&state, &eval, dissipated);
        samples.push(Sample { state, summary });
        Ok(Trajectory { samples, dt: self.integrator.dt, steps, output_every: self.output_every, solver_iterations: iterations })
    }
}

pub fn simulate(config: &SimConfig) -> Result<Trajectory, SimError> {
    Simulation::new(config)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn params() -> PhysicalParams {
        PhysicalParams { g: 9.81, kappa: 0.01, h: 1.0, half_length: PI }
    }

    #[test]
    fn curvature_small_slope_is_second_derivative() {
        let grid = Grid::new(64, PI).unwrap();
        let eta = grid.from_fn(|x| 1e-6 * (2.0 * x).cos(), Parity::Even);
        let h = curvature(&grid, &eta);
        for (j, &x) in grid.nodes().iter().enumerate() {
            assert!((h.values[j] + 4e-6 * (2.0 * x).cos()).abs() < 1e-15);
        }
    }

    #[test]
    fn curvature_matches_closed_form() {
        // H = eta_xx / (1 + eta_x^2)^(3/2)
        let grid = Grid::new(256, PI).unwrap();
        let eta = grid.from_fn(|x| 0.3 * x.cos(), Parity::Even);
        let h = curvature(&grid, &eta);
        for (j, &x) in grid.nodes().iter().enumerate() {
            let (ex, exx) = (-0.3 * x.sin(), -0.3 * x.cos());
            let expect = exx / (1.0 + ex * ex).powf(1.5);
            assert!((h.values[j] - expect).abs() < 1e-12, "{} vs {expect}", h.values[j]);
        }
    }

    #[test]
    fn nonlinear_term_vanishes_at_rest_and_is_quadratic() {
        let grid = Grid::new(64, PI).unwrap();
        let zero = Field::zeros(64);
        let n0 = nonlinear_term(&grid, &zero, &zero, &zero);
        assert!(n0.max_abs() == 0.0);
        let eta = grid.from_fn(|x| 0.01 * x.cos(), Parity::Even);
        let psi = grid.from_fn(|x| 0.01 * (2.0 * x).cos(), Parity::Even);
        let g = crate::dtn::dtn_flat(&grid, &psi, 1.0);
        let n1 = nonlinear_term(&grid, &eta, &psi, &g);
        let n2 = nonlinear_term(&grid, &eta, &psi.scale(2.0), &g.scale(2.0));
        for (a, b) in n1.values.iter().zip(&n2.values) {
            assert!((4.0 * a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn pressure_is_mean_free_and_supported_near_walls() {
        let grid = Grid::new(256, PI).unwrap();
        let profile = build_cutoff(&params(), 1.0, &grid).unwrap();
        let d_eta = grid.from_fn(|x| x.cos() + 0.3, Parity::Even);
        let (p, p_of_t) = pressure_feedback(&grid, &profile, 1.0, &d_eta);
        assert!(grid.mean(&p.values).abs() < 1e-15);
        for (j, &x) in grid.nodes().iter().enumerate() {
            if x.abs() < PI - 1.0 {
                assert!((p.values[j] - p_of_t).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn damped_minus_undamped_is_pressure() {
        let grid = Grid::new(256, PI).unwrap();
        let profile = build_cutoff(&params(), 1.0, &grid).unwrap();
        let eta = grid.from_fn(|x| 0.01 * x.cos(), Parity::Even);
        let psi = grid.from_fn(|x| 0.05 * (2.0 * x).cos(), Parity::Even);
        let mut damped = WaveModel::new(&grid, params(), 12, Some(Damping { profile, lambda: 1.0 })).unwrap();
        let mut free = WaveModel::new(&grid, params(), 12, None).unwrap();
        let a = damped.rhs(&eta, &psi).unwrap();
        let b = free.rhs(&eta, &psi).unwrap();
        for j in 0..grid.len() {
            assert!((a.d_psi.values[j] - b.d_psi.values[j] + a.p_ext.values[j]).abs() < 1e-14);
            assert_eq!(a.d_eta.values[j], b.d_eta.values[j]);
        }
    }

    #[test]
    fn flat_rest_is_steady() {
        let grid = Grid::new(64, PI).unwrap();
        let mut model = WaveModel::new(&grid, params(), 8, None).unwrap();
        let zero = Field::zeros(64);
        let r = model.rhs(&zero, &zero).unwrap();
        assert_eq!(r.d_eta.max_abs(), 0.0);
        assert_eq!(r.d_psi.max_abs(), 0.0);
    }

    #[test]
    fn etd_coefficients_reduce_to_rk4() {
        let c = EtdCoefficients::new(Complex64::new(0.0, 1e-13), 1.0);
        assert!((c.f1 - 1.0 / 6.0).norm() < 1e-12);
        assert!((c.f2 - 1.0 / 6.0).norm() < 1e-12);
        assert!((c.f3 - 1.0 / 6.0).norm() < 1e-12);
        assert!((c.q - 0.5).norm() < 1e-12);
    }

    #[test]
    fn etd_coefficients_continuous_across_branch() {
        let below = EtdCoefficients::new(Complex64::new(0.0, -0.999_999), 1.0);
        let above = EtdCoefficients::new(Complex64::new(0.0, -1.000_001), 1.0);
        assert!((below.f1 - above.f1).norm() < 1e-6);
        assert!((below.f3 - above.f3).norm() < 1e-6);
    }

    #[test]
    fn linear_mode_is_exact() {
        // with tiny amplitude the evolution is the linear standing wave
        let grid = Grid::new(32, PI).unwrap();
        let p = params();
        let mut model = WaveModel::new(&grid, p, 8, None).unwrap();
        let omega = p.omega_squared(1.0).sqrt();
        let dt = 0.05;
        let integ = Etdrk4::new(&grid, &p, dt);
        let a = 1e-9;
        let mut state = SurfaceState::standing_mode(&grid, 1, a);
        for _ in 0..40 {
            let eval = model.rhs(&state.eta, &state.psi).unwrap();
            state = integ.step(&mut model, &state, &eval).unwrap().state;
        }
        let t = 40.0 * dt;
        let expect = a * (omega * t).cos();
        let got = state.eta.values[grid.len() / 2];
        assert!((got - expect).abs() < 1e-8 * a, "{got} vs {expect}");
    }
}
