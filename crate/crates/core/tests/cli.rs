use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

use wwdamp::dynamics::SurfaceState;
use wwdamp::grid::{Grid, Parity};
use wwdamp::persist::write_checkpoint;

const BASE: &str = r#""g": 9.81, "kappa": 0.01, "h": 1.0, "L": 3.141592653589793, "delta": 2.0, "N": 128, "M": 16"#;

fn write_config(dir: &Path, name: &str, extra: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    fs::write(&path, format!("{{{BASE}, {extra}}}")).unwrap();
    path
}

fn wwdamp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wwdamp")).args(args).env_remove("WWDAMP_OUTPUT_DIR").output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("verification.json")).unwrap()).unwrap()
}

#[test]
fn damped_run_passes_and_writes_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", r#""T": 1.0"#);
    let out_dir = tmp.path().join("out");
    let out = wwdamp(&["simulate", "-c", cfg.to_str().unwrap(), "-o", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["trajectory.csv", "verification.json", "constants.json", "profile.csv", "checkpoint.bin"] {
        assert!(out_dir.join(f).is_file(), "{f}");
    }
    let r = report(&out_dir);
    assert_eq!(r["checks"]["C14"]["pass"], Value::Bool(true));
    assert!(r["checks"].get("conservation").is_none());
    let csv = fs::read_to_string(out_dir.join("trajectory.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert!(header.starts_with("t,H,H_tilde,kinetic,potential_grav,potential_surf,dissipation_rate"));
    assert!(header.contains("margin_tension"));
}

#[test]
fn undamped_run_checks_conservation() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", r#""T": 1.0, "damping": false"#);
    let out_dir = tmp.path().join("out");
    let out = wwdamp(&["simulate", "-c", cfg.to_str().unwrap(), "-o", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(&out_dir);
    assert_eq!(r["checks"]["C14"]["not_applicable"], Value::Bool(true));
    assert_eq!(r["checks"]["conservation"]["pass"], Value::Bool(true));
}

#[test]
fn verifier_selection_and_env_output_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("from-env");
    let cfg = write_config(tmp.path(), "c.json", r#""T": 0.5, "verifiers": ["C14", "d7"], "output_dir": "/nonexistent/ignored""#);
    let out = Command::new(env!("CARGO_BIN_EXE_wwdamp"))
        .args(["simulate", "-c", cfg.to_str().unwrap()])
        .env("WWDAMP_OUTPUT_DIR", &out_dir)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(&out_dir);
    let keys: Vec<&String> = r["checks"].as_object().unwrap().keys().collect();
    assert_eq!(keys, ["C14", "d7"]);
}

#[test]
fn validation_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = tmp.path().join("out");
    let o = o.to_str().unwrap();
    let bad_n = tmp.path().join("n.json");
    fs::write(&bad_n, format!("{{{}, \"T\": 1.0}}", BASE.replace("\"N\": 128", "\"N\": 100"))).unwrap();
    let out = wwdamp(&["simulate", "-c", bad_n.to_str().unwrap(), "-o", o]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("N"));

    let deep = write_config(tmp.path(), "deep.json", r#""T": 1.0, "initial": {"mode": 1, "amplitude": 0.6}"#);
    assert_eq!(code(&wwdamp(&["simulate", "-c", deep.to_str().unwrap(), "-o", o])), 2);

    let unknown = write_config(tmp.path(), "unknown.json", r#""T": 1.0, "lamda": 1.0"#);
    let out = wwdamp(&["simulate", "-c", unknown.to_str().unwrap(), "-o", o]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("lamda"));

    let corrupt = tmp.path().join("bad.bin");
    fs::write(&corrupt, b"WWDAMP02\x10\0\0\0\0\0\0\0").unwrap();
    let resume = write_config(tmp.path(), "resume.json", &format!(r#""T": 1.0, "initial": {{"state": {:?}}}"#, corrupt));
    let out = wwdamp(&["simulate", "-c", resume.to_str().unwrap(), "-o", o]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("WWDAMP01"));
    assert!(!Path::new(o).join("trajectory.csv").exists());
}

#[test]
fn missing_config_exits_1() {
    let out = wwdamp(&["simulate", "-c", "/nonexistent/config.json"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn steep_state_blows_up_with_diagnostics() {
    let tmp = tempfile::tempdir().unwrap();
    let grid = Grid::new(128, std::f64::consts::PI).unwrap();
    let state = SurfaceState {
        t: 0.0,
        eta: grid.from_fn(|x| 0.2 * (30.0 * x).cos(), Parity::Even),
        psi: grid.from_fn(|_| 0.0, Parity::Even),
    };
    let ck = tmp.path().join("steep.bin");
    write_checkpoint(&ck, &state).unwrap();
    let cfg = write_config(tmp.path(), "c.json", &format!(r#""T": 1.0, "initial": {{"state": {:?}}}"#, ck));
    let out_dir = tmp.path().join("out");
    let out = wwdamp(&["simulate", "-c", cfg.to_str().unwrap(), "-o", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    let blowup: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("blowup.json")).unwrap()).unwrap();
    assert!(blowup["reason"].as_str().unwrap().contains("eta_x"));
    assert!(out_dir.join("checkpoint.bin").is_file());
    assert!(!out_dir.join("trajectory.csv").exists());
}

#[test]
fn dispersion_reports_and_fails_on_tolerance() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", r#""T": 1.0, "damping": false"#);
    let o = tmp.path().join("out");
    let args = ["dispersion", "-c", cfg.to_str().unwrap(), "-o", o.to_str().unwrap(), "--modes", "1,2", "--periods", "3"];
    let out = wwdamp(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(o.join("dispersion.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    let strict = [&args[..], &["--tolerance", "0"]].concat();
    let out = wwdamp(&strict);
    assert_eq!(code(&out), 4);
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

#[test]
fn constants_subcommand_writes_ledger() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", r#""T": 1.0"#);
    let o = tmp.path().join("out");
    let out = wwdamp(&["constants", "-c", cfg.to_str().unwrap(), "-o", o.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let doc: Value = serde_json::from_str(&fs::read_to_string(o.join("constants.json")).unwrap()).unwrap();
    assert!(doc["ledger"]["c"].as_f64().unwrap() > 0.0);
    assert!(o.join("profile.csv").is_file());
    assert!(!o.join("trajectory.csv").exists());
}

#[test]
fn verify_subcommand_matches_simulate() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", r#""T": 0.5, "snapshots": true"#);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(code(&wwdamp(&["simulate", "-c", cfg.to_str().unwrap(), "-o", a.to_str().unwrap()])), 0);
    let states = a.join("states.bin");
    let out = wwdamp(&["verify", "-c", cfg.to_str().unwrap(), "--states", states.to_str().unwrap(), "-o", b.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read(a.join("verification.json")).unwrap(), fs::read(b.join("verification.json")).unwrap());
}
