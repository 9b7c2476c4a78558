//! Experiment orchestration: runs a configured simulation and writes its artifacts.

use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::dispersion::DispersionPoint;
use crate::dtn::DtnSolver;
use crate::dynamics::{SampleSummary, SimConfig, SimError, Simulation, SurfaceState, Trajectory};
use crate::grid::Grid;
use crate::params::{build_cutoff, CutoffProfile};
use crate::persist::{read_states, write_atomic, write_checkpoint, write_states, PersistError};
use crate::verify::{compute_constants, run_verification, ConstantsLedger, VerificationReport, VerifyError};

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const VERIFICATION_FILE: &str = "verification.json";
pub const CONSTANTS_FILE: &str = "constants.json";
pub const PROFILE_FILE: &str = "profile.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const STATES_FILE: &str = "states.bin";
pub const INTERIOR_FILE: &str = "interior.bin";
pub const BLOWUP_FILE: &str = "blowup.json";
pub const DISPERSION_FILE: &str = "dispersion.csv";

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Solver(SimError),
    #[error(transparent)]
    Verify(VerifyError),
    #[error("{path}: {source}")]
    Persist { path: PathBuf, source: PersistError },
    #[error("writing {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl RunError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(ConfigError::Io { .. }) => 1,
            RunError::Config(_) => 2,
            RunError::Solver(SimError::Setup(_) | SimError::Param(_) | SimError::Grid(_)) => 2,
            RunError::Solver(_) => 3,
            RunError::Verify(VerifyError::Sim(SimError::Setup(_) | SimError::Param(_) | SimError::Grid(_))) => 2,
            RunError::Verify(VerifyError::Param(_) | VerifyError::TooFewSamples(_) | VerifyError::CadenceTooCoarse { .. }) => 2,
            RunError::Verify(_) => 3,
            RunError::Persist { source: PersistError::Io(_), .. } => 1,
            RunError::Persist { .. } => 2,
            RunError::Io { .. } => 1,
        }
    }
}

fn io_at(path: &Path) -> impl FnOnce(io::Error) -> RunError + '_ {
    move |source| RunError::Io { path: path.to_owned(), source }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), RunError> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value).map_err(io::Error::other)?;
        w.write_all(b"\n")
    })
    .map_err(io_at(path))
}

fn write_csv(path: &Path, fill: impl FnOnce(&mut csv::Writer<&mut dyn Write>) -> csv::Result<()>) -> Result<(), RunError> {
    write_atomic(path, |w| {
        let mut writer = csv::Writer::from_writer(w);
        fill(&mut writer).map_err(io::Error::other)?;
        writer.flush()
    })
    .map_err(io_at(path))
}

/// Shortest round-trip representation, so reruns produce identical bytes.
fn num(v: f64) -> String {
    format!("{v:e}")
}

const MARGINS: [&str; 8] = ["rho", "rho_x", "nu", "mx_etax2", "eta_x", "min_eta", "tension", "m_x"];

pub fn write_trajectory_csv(path: &Path, samples: &[&SampleSummary]) -> Result<(), RunError> {
    write_csv(path, |w| {
        let mut head: Vec<String> = [
            "t",
            "H",
            "H_tilde",
            "kinetic",
            "potential_grav",
            "potential_surf",
            "dissipation_rate",
            "dissipated",
            "min_eta",
            "max_abs_eta_x",
            "assumption_flags",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        head.extend(MARGINS.iter().map(|m| format!("margin_{m}")));
        w.write_record(&head)?;
        for s in samples {
            let e = &s.energy;
            let mut row = vec![
                num(s.t),
                num(e.total),
                num(e.total_tilde),
                num(e.kinetic),
                num(e.potential_grav),
                num(e.potential_surf),
                num(s.dissipation_rate),
                num(s.dissipated),
                num(s.min_eta),
                num(s.max_abs_eta_x),
            ];
            match &s.assumptions {
                Some(a) => {
                    row.push(a.violations().to_string());
                    row.extend(
                        [a.rho, a.rho_x, a.nu, a.mx_etax2, a.eta_x, a.min_eta, a.tension, a.m_x].into_iter().map(num),
                    );
                }
                None => row.extend(std::iter::repeat_n(String::new(), 1 + MARGINS.len())),
            }
            w.write_record(&row)?;
        }
        Ok(())
    })
}

pub fn write_profile_csv(path: &Path, grid: &Grid, profile: &CutoffProfile) -> Result<(), RunError> {
    write_csv(path, |w| {
        w.write_record(["x", "phi", "m", "m_x", "m_xx", "chi", "chi_x"])?;
        let columns = [&profile.phi, &profile.m, &profile.m_x, &profile.m_xx, &profile.chi, &profile.chi_x];
        for (i, &x) in grid.nodes().iter().enumerate() {
            let row = columns.iter().map(|f| num(f.values[i]));
            w.write_record(std::iter::once(num(x)).chain(row))?;
        }
        Ok(())
    })
}

#[derive(Debug, Serialize)]
struct ConstantsDocument<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    ledger: Option<&'a ConstantsLedger>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    max_kappa: f64,
    tension_margin: f64,
    sup_m_xx: f64,
}

/// Writes the constants ledger and the cutoff profile. Returns the ledger when the constants exist.
pub fn write_constants(config: &RunConfig, dir: &Path) -> Result<Option<ConstantsLedger>, RunError> {
    let physical = config.physical();
    let grid = Grid::new(config.n, config.half_length).map_err(|e| RunError::Solver(e.into()))?;
    let profile = build_cutoff(&physical, config.delta, &grid).map_err(|e| RunError::Solver(e.into()))?;
    let ledger = compute_constants(&physical, &profile, config.lambda);
    let doc = ConstantsDocument {
        ledger: ledger.as_ref().ok(),
        error: ledger.as_ref().err().map(|e| e.to_string()),
        max_kappa: profile.max_kappa(physical.g),
        tension_margin: profile.tension_margin(&physical),
        sup_m_xx: profile.sup.m_xx_abs,
    };
    write_json(&dir.join(CONSTANTS_FILE), &doc)?;
    write_profile_csv(&dir.join(PROFILE_FILE), &grid, &profile)?;
    Ok(ledger.ok())
}

#[derive(Debug, Serialize)]
struct BlowUpReport<'a> {
    t: f64,
    reason: &'a str,
    checkpoint: &'a str,
}

/// Result of a completed run.
#[derive(Debug)]
pub struct RunOutcome {
    pub output_dir: PathBuf,
    pub trajectory: Trajectory,
    pub report: VerificationReport,
}

impl RunOutcome {
    pub fn failures(&self) -> Vec<&str> {
        self.report.failures()
    }
}

fn verify_and_write(
    config: &RunConfig,
    sim: &SimConfig,
    states: &[SurfaceState],
    dissipated: Option<f64>,
    dir: &Path,
) -> Result<VerificationReport, RunError> {
    let (mut report, _) = run_verification(sim, states, dissipated).map_err(RunError::Verify)?;
    if let Some(tags) = &config.verifiers {
        report.retain(tags);
    }
    write_json(&dir.join(VERIFICATION_FILE), &report)?;
    Ok(report)
}

/// Simulates, verifies and writes every artifact into `dir`.
pub fn run(config: &RunConfig, dir: &Path) -> Result<RunOutcome, RunError> {
    config.validate()?;
    let sim = config.sim_config()?;
    write_constants(config, dir)?;
    let mut simulation = Simulation::new(&sim).map_err(RunError::Solver)?;
    let trajectory = match simulation.run() {
        Ok(t) => t,
        Err(SimError::BlowUp { t, reason, state }) => {
            let ck = dir.join(CHECKPOINT_FILE);
            write_checkpoint(&ck, &state).map_err(io_at(&ck))?;
            write_json(&dir.join(BLOWUP_FILE), &BlowUpReport { t, reason: &reason, checkpoint: CHECKPOINT_FILE })?;
            return Err(RunError::Solver(SimError::BlowUp { t, reason, state }));
        }
        Err(e) => return Err(RunError::Solver(e)),
    };
    let summaries: Vec<&SampleSummary> = trajectory.samples.iter().map(|s| &s.summary).collect();
    write_trajectory_csv(&dir.join(TRAJECTORY_FILE), &summaries)?;
    let last = &trajectory.last().state;
    let ck = dir.join(CHECKPOINT_FILE);
    write_checkpoint(&ck, last).map_err(io_at(&ck))?;

    let dissipated = config.damping.then(|| trajectory.last().summary.dissipated);
    if config.snapshots {
        let refs: Vec<&SurfaceState> = trajectory.samples.iter().map(|s| &s.state).collect();
        let path = dir.join(STATES_FILE);
        write_states(&path, &refs, dissipated).map_err(io_at(&path))?;
        let mut solver = DtnSolver::new(&simulation.grid, config.h, config.degree())
            .map_err(|e| RunError::Solver(e.into()))?;
        let solved = solver.solve_potential(&last.eta, &last.psi).map_err(|e| RunError::Solver(e.into()))?;
        if let Some(interior) = solved.interior {
            let path = dir.join(INTERIOR_FILE);
            write_atomic(&path, |w| interior.write_binary(w)).map_err(io_at(&path))?;
        }
    }

    let states: Vec<SurfaceState> = trajectory.samples.iter().map(|s| s.state.clone()).collect();
    let report = verify_and_write(config, &sim, &states, dissipated, dir)?;
    Ok(RunOutcome { output_dir: dir.to_owned(), trajectory, report })
}

/// Runs the verifier suite on states stored by an earlier run.
pub fn verify_stored(config: &RunConfig, states_path: &Path, dir: &Path) -> Result<VerificationReport, RunError> {
    config.validate()?;
    let stored = read_states(states_path).map_err(|source| RunError::Persist { path: states_path.to_owned(), source })?;
    let first = stored.states.first().ok_or(RunError::Verify(VerifyError::TooFewSamples(0)))?;
    if first.eta.len() != config.n {
        return Err(RunError::Config(ConfigError::Invalid {
            field: "N".into(),
            message: format!("states file has {} nodes, config has {}", first.eta.len(), config.n),
        }));
    }
    let mut sim = config.sim_config()?;
    sim.initial = crate::dynamics::InitialData::State(first.clone());
    let dissipated = if config.damping { stored.dissipated } else { None };
    verify_and_write(config, &sim, &stored.states, dissipated, dir)
}

pub fn write_dispersion_csv(path: &Path, points: &[DispersionPoint]) -> Result<(), RunError> {
    write_csv(path, |w| {
        w.write_record(["mode", "k", "omega_theory", "omega_measured", "rel_error", "energy_drift"])?;
        for p in points {
            w.write_record([
                p.mode.to_string(),
                num(p.k),
                num(p.omega_theory),
                num(p.omega_measured),
                num(p.rel_error),
                num(p.energy_drift),
            ])?;
        }
        Ok(())
    })
}
