use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{InitialData, SimConfig, SurfaceState};
use crate::grid::{Field, Grid, Parity, MIN_NODES};
use crate::params::{ControlParams, PhysicalParams};
use crate::persist::{read_checkpoint, PersistError};

/// Overrides `output_dir` when set.
pub const OUTPUT_DIR_ENV: &str = "WWDAMP_OUTPUT_DIR";
/// Thread-count hint for sweeps.
pub const THREADS_ENV: &str = "WWDAMP_THREADS";

/// Verifier tags accepted in the `verifiers` list.
pub const VERIFIER_TAGS: [&str; 14] = [
    "C6bis", "C4", "Sigma", "t70rho", "d11", "CL8", "t49", "d7", "d8", "Bures4", "C14", "d20", "decay", "conservation",
];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid {field}: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.into(), message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum InitialSpec {
    /// Standing wave in one mode; amplitude in units of h.
    Mode {
        mode: usize,
        amplitude: f64,
    },
    /// Sum of the first `max_mode` modes with seeded random coefficients, scaled so max |eta| = amplitude h.
    Random {
        random: f64,
        max_mode: usize,
    },
    /// Checkpoint file written by an earlier run.
    State {
        state: PathBuf,
    },
}

impl Default for InitialSpec {
    fn default() -> Self {
        InitialSpec::Mode { mode: 1, amplitude: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub g: f64,
    pub kappa: f64,
    pub h: f64,
    #[serde(rename = "L")]
    pub half_length: f64,
    pub delta: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(rename = "N")]
    pub n: usize,
    /// Chebyshev degree in the vertical; N/4 when omitted.
    #[serde(rename = "M", default)]
    pub m: Option<usize>,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(rename = "T")]
    pub t_end: f64,
    #[serde(default)]
    pub initial: InitialSpec,
    #[serde(default = "default_true")]
    pub damping: bool,
    #[serde(default)]
    pub output_every: Option<usize>,
    /// Subset of verifier tags to report; all when omitted.
    #[serde(default)]
    pub verifiers: Option<Vec<String>>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub monitor: bool,
    /// Also write every output sample to states.bin.
    #[serde(default)]
    pub snapshots: bool,
}

fn default_lambda() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("wwdamp-out")
}

impl RunConfig {
    pub fn physical(&self) -> PhysicalParams {
        PhysicalParams { g: self.g, kappa: self.kappa, h: self.h, half_length: self.half_length }
    }

    pub fn control(&self) -> ControlParams {
        ControlParams { delta: self.delta, lambda: self.lambda }
    }

    pub fn degree(&self) -> usize {
        self.m.unwrap_or(self.n / 4)
    }

    /// Evaluates the initial descriptor on the grid.
    pub fn initial_state(&self) -> Result<SurfaceState, ConfigError> {
        let grid = Grid::new(self.n, self.half_length).map_err(|e| invalid("N", e.to_string()))?;
        match &self.initial {
            InitialSpec::Mode { mode, amplitude } => {
                if *mode == 0 || *mode > grid.dealias_cutoff() {
                    return Err(invalid(
                        "initial.mode",
                        format!("must be between 1 and {}, got {mode}", grid.dealias_cutoff()),
                    ));
                }
                Ok(SurfaceState::standing_mode(&grid, *mode, amplitude * self.h))
            }
            InitialSpec::Random { random, max_mode } => {
                if *max_mode == 0 || *max_mode > grid.dealias_cutoff() {
                    return Err(invalid(
                        "initial.max_mode",
                        format!("must be between 1 and {}, got {max_mode}", grid.dealias_cutoff()),
                    ));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                let coefficients: Vec<f64> = (0..*max_mode).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let k = grid.wavenumbers();
                let shape = grid.from_fn(
                    |x| coefficients.iter().enumerate().map(|(j, c)| c * (k[j + 1] * x).cos()).sum(),
                    Parity::Even,
                );
                let peak = shape.max_abs();
                let scale = if peak > 0.0 { random * self.h / peak } else { 0.0 };
                Ok(SurfaceState { t: 0.0, eta: shape.scale(scale), psi: Field::zeros(self.n) })
            }
            InitialSpec::State { state } => {
                let s = read_checkpoint(state).map_err(|e| match e {
                    PersistError::Io(source) => ConfigError::Io { path: state.clone(), source },
                    other => invalid("initial.state", other.to_string()),
                })?;
                if s.eta.len() != self.n {
                    return Err(invalid("initial.state", format!("checkpoint has {} nodes, config has N = {}", s.eta.len(), self.n)));
                }
                Ok(s)
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let physical = self.physical();
        physical.validate().map_err(|e| invalid("physical", e.to_string()))?;
        self.control().validate(&physical).map_err(|e| invalid("control", e.to_string()))?;
        if !self.n.is_power_of_two() || self.n < MIN_NODES {
            return Err(invalid("N", format!("must be a power of two >= {MIN_NODES}, got {}", self.n)));
        }
        if self.degree() < 4 {
            return Err(invalid("M", format!("must be at least 4, got {}", self.degree())));
        }
        if !(self.t_end.is_finite() && self.t_end > 0.0) {
            return Err(invalid("T", format!("must be finite and > 0, got {}", self.t_end)));
        }
        if let Some(dt) = self.dt {
            if !(dt.is_finite() && dt > 0.0) {
                return Err(invalid("dt", format!("must be finite and > 0, got {dt}")));
            }
        }
        if self.output_every == Some(0) {
            return Err(invalid("output_every", "must be at least 1"));
        }
        if let Some(tags) = &self.verifiers {
            if let Some(bad) = tags.iter().find(|t| !VERIFIER_TAGS.contains(&t.as_str())) {
                return Err(invalid("verifiers", format!("unknown tag {bad:?}")));
            }
        }
        match &self.initial {
            InitialSpec::State { state } if !state.is_file() => {
                return Err(invalid("initial.state", format!("{} does not exist", state.display())));
            }
            InitialSpec::Mode { amplitude: a, .. } | InitialSpec::Random { random: a, .. } if !a.is_finite() => {
                return Err(invalid("initial.amplitude", "must be finite"));
            }
            _ => {}
        }
        let state = self.initial_state()?;
        if state.t >= self.t_end {
            return Err(invalid("T", format!("initial state is at t = {}, past the end time {}", state.t, self.t_end)));
        }
        let min_eta = state.eta.min();
        if min_eta <= -0.5 * self.h {
            return Err(invalid("initial", format!("min eta = {min_eta} must exceed -h/2 = {}", -0.5 * self.h)));
        }
        Ok(())
    }

    pub fn sim_config(&self) -> Result<SimConfig, ConfigError> {
        Ok(SimConfig {
            physical: self.physical(),
            control: self.control(),
            damping: self.damping,
            n: self.n,
            degree: self.degree(),
            t_end: self.t_end,
            dt: self.dt,
            output_every: self.output_every,
            initial: InitialData::State(self.initial_state()?),
            monitor: self.monitor,
        })
    }
}

/// Parses and validates a config document.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let config: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ConfigError::Parse { path, message: e.into_inner().to_string() }
    })?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_owned(), source })?;
    parse_config(&text)
}

/// Output directory after the environment override.
pub fn resolve_output_dir(config: &RunConfig) -> PathBuf {
    match std::env::var_os(OUTPUT_DIR_ENV) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => config.output_dir.clone(),
    }
}

/// Thread hint from the environment, else the available parallelism.
pub fn thread_hint() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"g": 9.81, "kappa": 0.01, "h": 1.0, "L": 3.141592653589793, "delta": 1.0, "N": 64, "T": 1.0}"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.lambda, 1.0);
        assert_eq!(c.degree(), 16);
        assert_eq!(c.dt, None);
        assert!(c.damping);
        assert_eq!(c.initial, InitialSpec::Mode { mode: 1, amplitude: 0.01 });
    }

    #[test]
    fn non_power_of_two_rejected() {
        let text = MINIMAL.replace("\"N\": 64", "\"N\": 100");
        match parse_config(&text) {
            Err(ConfigError::Invalid { field, .. }) => assert_eq!(field, "N"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn deep_trough_rejected() {
        let text = MINIMAL.replace("\"T\": 1.0", "\"T\": 1.0, \"initial\": {\"mode\": 1, \"amplitude\": 0.6}");
        match parse_config(&text) {
            Err(ConfigError::Invalid { field, .. }) => assert_eq!(field, "initial"),
            other => panic!("{other:?}"),
        }
        let ok = MINIMAL.replace("\"T\": 1.0", "\"T\": 1.0, \"initial\": {\"mode\": 1, \"amplitude\": 0.4}");
        assert!(parse_config(&ok).is_ok());
    }

    #[test]
    fn unknown_key_rejected_with_path() {
        let text = MINIMAL.replace("\"T\": 1.0", "\"T\": 1.0, \"lamda\": 2.0");
        match parse_config(&text) {
            Err(ConfigError::Parse { message, .. }) => assert!(message.contains("lamda"), "{message}"),
            other => panic!("{other:?}"),
        }
        let text = MINIMAL.replace("\"N\": 64", "\"N\": \"many\"");
        match parse_config(&text) {
            Err(ConfigError::Parse { path, .. }) => assert_eq!(path, "N"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_initial_key_rejected() {
        let text = MINIMAL.replace("\"T\": 1.0", "\"T\": 1.0, \"initial\": {\"mode\": 1, \"amplitude\": 0.01, \"phase\": 1}");
        assert!(matches!(parse_config(&text), Err(ConfigError::Parse { .. })));
    }

    #[test]
    fn missing_state_file_rejected() {
        let text = MINIMAL.replace("\"T\": 1.0", "\"T\": 1.0, \"initial\": {\"state\": \"/nonexistent/ck.bin\"}");
        assert!(matches!(parse_config(&text), Err(ConfigError::Invalid { .. })));
    }

    #[test]
    fn unknown_verifier_rejected() {
        let text = MINIMAL.replace("\"T\": 1.0", "\"T\": 1.0, \"verifiers\": [\"C14\", \"nope\"]");
        assert!(matches!(parse_config(&text), Err(ConfigError::Invalid { .. })));
    }

    #[test]
    fn random_initial_is_seeded() {
        let text = MINIMAL.replace("\"T\": 1.0", "\"T\": 1.0, \"seed\": 7, \"initial\": {\"random\": 0.02, \"max_mode\": 6}");
        let a = parse_config(&text).unwrap().initial_state().unwrap();
        let b = parse_config(&text).unwrap().initial_state().unwrap();
        assert_eq!(a, b);
        assert!((a.eta.max_abs() - 0.02).abs() < 1e-15);
        let other = parse_config(&text.replace("\"seed\": 7", "\"seed\": 8")).unwrap().initial_state().unwrap();
        assert_ne!(a.eta, other.eta);
    }
}
