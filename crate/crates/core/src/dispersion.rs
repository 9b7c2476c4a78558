use serde::Serialize;

use crate::dynamics::{InitialData, SimConfig, SimError, Simulation};
use crate::grid::Grid;

/// Cosine coefficient of `values` for the given mode.
pub fn mode_amplitude(grid: &Grid, values: &[f64], mode: usize) -> f64 {
    let k = grid.wavenumbers()[mode];
    let basis: Vec<f64> = grid.nodes().iter().map(|&x| (k * x).cos()).collect();
    grid.inner(values, &basis) / grid.inner(&basis, &basis)
}

/// Times at which the sampled signal changes sign, by linear interpolation.
pub fn zero_crossings(times: &[f64], values: &[f64]) -> Vec<f64> {
    times
        .windows(2)
        .zip(values.windows(2))
        .filter(|(_, v)| (v[0] < 0.0) != (v[1] < 0.0) && v[0] != v[1])
        .map(|(t, v)| t[0] + (t[1] - t[0]) * v[0] / (v[0] - v[1]))
        .collect()
}

/// Angular frequency from the mean spacing between the first and last zero crossings.
pub fn measure_frequency(times: &[f64], values: &[f64]) -> Option<f64> {
    let crossings = zero_crossings(times, values);
    if crossings.len() < 3 {
        return None;
    }
    let half_periods = (crossings.len() - 1) as f64;
    let span = crossings[crossings.len() - 1] - crossings[0];
    Some(std::f64::consts::PI * half_periods / span)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DispersionPoint {
    pub mode: usize,
    pub k: f64,
    pub omega_theory: f64,
    pub omega_measured: f64,
    pub rel_error: f64,
    pub energy_drift: f64,
}

/// Runs an undamped standing wave in a single mode for `periods` linear periods and
/// measures its frequency from the mode coefficient.
pub fn dispersion_point(base: &SimConfig, mode: usize, amplitude: f64, periods: f64) -> Result<DispersionPoint, SimError> {
    let grid = Grid::new(base.n, base.physical.half_length)?;
    if mode == 0 || mode > grid.dealias_cutoff() {
        return Err(SimError::Setup(format!("mode {mode} is not a retained nonzero mode")));
    }
    let k = grid.wavenumbers()[mode];
    let omega_theory = base.physical.omega_squared(k).sqrt();
    let config = SimConfig {
        damping: false,
        monitor: false,
        t_end: periods * 2.0 * std::f64::consts::PI / omega_theory,
        output_every: Some(1),
        initial: InitialData::Mode { mode, amplitude },
        ..base.clone()
    };
    let trajectory = Simulation::new(&config)?.run()?;
    let times = trajectory.times();
    let coefficients: Vec<f64> =
        trajectory.samples.iter().map(|s| mode_amplitude(&grid, &s.state.eta.values, mode)).collect();
    let omega_measured = measure_frequency(&times, &coefficients)
        .ok_or_else(|| SimError::Setup(format!("mode {mode} completed too few oscillations to measure")))?;
    let energies = trajectory.energies();
    let h0 = energies[0];
    let energy_drift = energies.iter().map(|e| (e - h0).abs() / h0).fold(0.0, f64::max);
    Ok(DispersionPoint {
        mode,
        k,
        omega_theory,
        omega_measured,
        rel_error: (omega_measured - omega_theory).abs() / omega_theory,
        energy_drift,
    })
}

/// Measures each mode on up to `threads` worker threads. Results keep the order of `modes`.
pub fn dispersion_sweep(
    base: &SimConfig,
    modes: &[usize],
    amplitude: f64,
    periods: f64,
    threads: usize,
) -> Vec<Result<DispersionPoint, SimError>> {
    let threads = threads.clamp(1, modes.len().max(1));
    let mut results: Vec<Option<Result<DispersionPoint, SimError>>> = (0..modes.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let chunks: Vec<_> = results.chunks_mut(modes.len().div_ceil(threads).max(1)).collect();
        let mut offset = 0;
        for chunk in chunks {
            let ids = &modes[offset..offset + chunk.len()];
            offset += chunk.len();
            scope.spawn(move || {
                for (slot, &mode) in chunk.iter_mut().zip(ids) {
                    *slot = Some(dispersion_point(base, mode, amplitude, periods));
                }
            });
        }
    });
    results.into_iter().map(|r| r.expect("every slot is filled")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn crossings_of_sampled_cosine() {
        let omega = 2.7;
        let times: Vec<f64> = (0..4000).map(|i| i as f64 * 0.005).collect();
        let values: Vec<f64> = times.iter().map(|t| (omega * t).cos()).collect();
        let measured = measure_frequency(&times, &values).unwrap();
        assert!((measured - omega).abs() / omega < 1e-7, "{measured}");
    }

    #[test]
    fn too_short_signal_has_no_frequency() {
        let times = [0.0, 1.0, 2.0];
        assert_eq!(measure_frequency(&times, &[1.0, -1.0, -2.0]), None);
    }

    #[test]
    fn mode_amplitude_picks_single_mode() {
        let grid = Grid::new(64, PI).unwrap();
        let values: Vec<f64> = grid.nodes().iter().map(|&x| 0.3 * (2.0 * x).cos() - 0.1 * (5.0 * x).cos()).collect();
        assert!((mode_amplitude(&grid, &values, 2) - 0.3).abs() < 1e-14);
        assert!((mode_amplitude(&grid, &values, 5) + 0.1).abs() < 1e-14);
        assert!(mode_amplitude(&grid, &values, 3).abs() < 1e-14);
    }
}
