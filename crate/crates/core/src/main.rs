use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use wwdamp::config::{load_config, resolve_output_dir, thread_hint, RunConfig};
use wwdamp::dispersion::dispersion_sweep;
use wwdamp::run::{self, RunError, DISPERSION_FILE};
use wwdamp::verify::VerificationReport;

const EXIT_VERIFY_FAILED: u8 = 4;

#[derive(Parser)]
#[command(name = "wwdamp", version, about = "Damped gravity-capillary water waves in a tank")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(short, long)]
    config: PathBuf,
    /// Output directory; overrides the config file and WWDAMP_OUTPUT_DIR.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation, verify it and write all artifacts.
    Simulate(Common),
    /// Run the verifier suite on stored states.
    Verify {
        #[command(flatten)]
        common: Common,
        /// states.bin written by a run with snapshots enabled.
        #[arg(long)]
        states: PathBuf,
    },
    /// Write the constants ledger and the cutoff profile only.
    Constants(Common),
    /// Measure linear-mode frequencies against the dispersion relation.
    Dispersion {
        #[command(flatten)]
        common: Common,
        /// Modes to measure.
        #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 3, 4])]
        modes: Vec<usize>,
        /// Amplitude in units of depth; small, so nonlinear shifts stay negligible.
        #[arg(long, default_value_t = 1e-4)]
        amplitude: f64,
        #[arg(long, default_value_t = 10.0)]
        periods: f64,
        /// Largest accepted relative frequency error.
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        /// Worker threads; defaults to WWDAMP_THREADS or the core count.
        #[arg(long)]
        threads: Option<usize>,
    },
}

fn setup(common: &Common) -> Result<(RunConfig, PathBuf), RunError> {
    let config = load_config(&common.config)?;
    let dir = common.output.clone().unwrap_or_else(|| resolve_output_dir(&config));
    Ok((config, dir))
}

fn report_outcome(report: &VerificationReport, dir: &Path) -> ExitCode {
    if !report.hypotheses.all_hold {
        eprintln!(
            "warning: hypothesis monitor flagged {} samples (bits {:#b})",
            report.hypotheses.samples_violating, report.hypotheses.violated_bits
        );
    }
    let failures = report.failures();
    if failures.is_empty() {
        println!("all {} checks passed; artifacts in {}", report.checks.len(), dir.display());
        ExitCode::SUCCESS
    } else {
        eprintln!("verification failed: {}", failures.join(", "));
        ExitCode::from(EXIT_VERIFY_FAILED)
    }
}

fn execute(command: Command) -> Result<ExitCode, RunError> {
    match command {
        Command::Simulate(common) => {
            let (config, dir) = setup(&common)?;
            let outcome = run::run(&config, &dir)?;
            let t = &outcome.trajectory;
            let (first, last) = (&t.samples[0].summary, &t.last().summary);
            println!(
                "{} steps of dt = {:.6e}; H: {:.6e} -> {:.6e} at t = {}",
                t.steps, t.dt, first.energy.total, last.energy.total, last.t
            );
            Ok(report_outcome(&outcome.report, &dir))
        }
        Command::Verify { common, states } => {
            let (config, dir) = setup(&common)?;
            let report = run::verify_stored(&config, &states, &dir)?;
            Ok(report_outcome(&report, &dir))
        }
        Command::Constants(common) => {
            let (config, dir) = setup(&common)?;
            config.validate()?;
            match run::write_constants(&config, &dir)? {
                Some(ledger) => println!("K = {:.6e}, C = {:.6e}, T0 = {:.6e}", ledger.k, ledger.c, ledger.t0),
                None => println!("constants unavailable for this configuration; see {}", dir.display()),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Dispersion { common, modes, amplitude, periods, tolerance, threads } => {
            let (config, dir) = setup(&common)?;
            config.validate()?;
            let sim = config.sim_config()?;
            let results = dispersion_sweep(&sim, &modes, amplitude, periods, threads.unwrap_or_else(thread_hint));
            let points = results.into_iter().collect::<Result<Vec<_>, _>>().map_err(RunError::Solver)?;
            run::write_dispersion_csv(&dir.join(DISPERSION_FILE), &points)?;
            let mut ok = true;
            for p in &points {
                let pass = p.rel_error <= tolerance;
                ok &= pass;
                println!(
                    "mode {:3}  omega {:.10}  measured {:.10}  rel err {:.2e}  {}",
                    p.mode,
                    p.omega_theory,
                    p.omega_measured,
                    p.rel_error,
                    if pass { "ok" } else { "FAIL" }
                );
            }
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(EXIT_VERIFY_FAILED) })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
