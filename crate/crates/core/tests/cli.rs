use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use kirchhoff::experiments::rk4_fixed;
use kirchhoff::io::parse_config;
use kirchhoff::spectral::{make_initial_state, observables, SpectralState};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn kirchhoff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kirchhoff"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("verdict JSON on stdout")
}

#[test]
fn verify_pokhozhaev_on_fixture_passes() {
    let cfg = fixture("fixture.json");
    let out = kirchhoff(&["verify", "--kind", "pokhozhaev", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let doc = stdout_json(&out);
    assert_eq!(doc["verdict"], "pass");
    assert_eq!(doc["experiment"], "pokhozhaev_conservation");
    assert_eq!(doc["tolerances"]["relative_drift"], 1e-6);
    assert_eq!(doc["params"]["experiment"]["tolerances"]["pokhozhaev"], 1e-6);
    assert!(doc["per_sample_csv_path"].is_null());
}

#[test]
fn every_verify_kind_runs_on_the_fixture() {
    let cfg = fixture("fixture.json");
    for kind in ["first-order", "identity", "zero-crossing", "gronwall"] {
        let out = kirchhoff(&["verify", "--kind", kind, "--config", cfg.to_str().unwrap()]);
        assert_eq!(code(&out), 0, "{kind}: {}", String::from_utf8_lossy(&out.stdout));
    }
    let out = kirchhoff(&["check-derivs", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert_eq!(stdout_json(&out)["experiment"], "derivative_gate");
}

#[test]
fn missing_subcommand_is_a_usage_error() {
    let out = kirchhoff(&[]);
    assert_eq!(code(&out), 64);
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(code(&kirchhoff(&["frobnicate"])), 64);
}

#[test]
fn config_errors_exit_65() {
    let out = kirchhoff(&["simulate", "--config", fixture("bad_key.json").to_str().unwrap()]);
    assert_eq!(code(&out), 65);
    assert!(String::from_utf8_lossy(&out.stderr).contains("famly"));
    let out = kirchhoff(&["simulate", "--config", fixture("bad_pokhozhaev.json").to_str().unwrap()]);
    assert_eq!(code(&out), 65);
    assert!(String::from_utf8_lossy(&out.stderr).contains("not both be zero"));
}

#[test]
fn pokhozhaev_check_on_other_family_is_a_config_error() {
    let out = kirchhoff(&[
        "verify",
        "--kind",
        "pokhozhaev",
        "--config",
        fixture("sweep_above_delta.json").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 65);
}

#[test]
fn sweep_above_delta_warns_but_passes() {
    let out = kirchhoff(&["sweep", "--config", fixture("sweep_above_delta.json").to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let doc = stdout_json(&out);
    let warnings = doc["warnings"].as_array().unwrap();
    assert!(warnings.iter().any(|w| w.as_str().unwrap().contains("exceeds δ")), "{warnings:?}");
}

#[test]
fn hypothesis_not_met_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("big.json");
    std::fs::write(
        &cfg,
        r#"{
            "nonlinearity": {"family": "pokhozhaev", "C1": 1.0, "C2": 1.0},
            "initial_data": {"epsilon": 1.0, "modes": [{"k": [1], "c": 0.0, "v": 2.0}]},
            "experiment": {"t_end": 1.0}
        }"#,
    )
    .unwrap();
    let out = kirchhoff(&["verify", "--kind", "gronwall", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert_eq!(stdout_json(&out)["verdict"], "hypothesis_not_met");
}

#[test]
fn simulate_matches_the_golden_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = kirchhoff(&[
        "simulate",
        "--config",
        fixture("fixture.json").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let produced = std::fs::read(dir.path().join("simulate.csv")).unwrap();
    let golden = std::fs::read(fixture("golden_simulate.csv")).unwrap();
    assert!(produced == golden, "simulate.csv differs from the golden file");
    let doc: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("simulate.json")).unwrap()).unwrap();
    assert_eq!(doc["per_sample_csv_path"], dir.path().join("simulate.csv").to_str().unwrap());
}

/// The golden table itself is checked against a fixed-step RK4 reference
/// integrated independently between consecutive sample times.
#[test]
fn golden_file_agrees_with_rk4_reference() {
    let cfg = parse_config(&std::fs::read_to_string(fixture("fixture.json")).unwrap()).unwrap();
    let state0 = make_initial_state(&cfg.initial_data).unwrap();
    let modes = Arc::clone(&state0.modes);
    let text = std::fs::read_to_string(fixture("golden_simulate.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,s,s_prime,s_second,E,F,I,H1,S,V,residual"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert!(rows.len() > 100);
    assert_eq!(rows.last().unwrap()[0], 50.0);

    let mut y = state0.to_flat();
    let mut t = 0.0;
    let mut worst: f64 = 0.0;
    for row in &rows {
        let span = row[0] - t;
        if span > 0.0 {
            let n = (span / 1e-3).ceil() as usize;
            let st = SpectralState::from_flat(t, Arc::clone(&modes), &y);
            y = rk4_fixed(&st, &cfg.nl, span / n as f64, n, &[n]).unwrap().remove(0);
            t = row[0];
        }
        let obs = observables(&SpectralState::from_flat(t, Arc::clone(&modes), &y), &cfg.nl).unwrap();
        for (got, want) in [(row[1], obs.s), (row[2], obs.s_prime), (row[4], obs.e), (row[6], obs.i.unwrap())] {
            worst = worst.max((got - want).abs());
        }
    }
    assert!(worst < 1e-10, "golden vs RK4: {worst:e}");
}

/// Verdict JSON with the `timestamp` line removed.
fn strip_timestamp(bytes: &[u8]) -> String {
    let text = String::from_utf8(bytes.to_vec()).unwrap();
    assert_eq!(text.matches("\"timestamp\"").count(), 1);
    text.lines().filter(|l| !l.trim_start().starts_with("\"timestamp\"")).collect::<Vec<_>>().join("\n")
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture("fixture.json");
    let run = || {
        let out = kirchhoff(&[
            "verify",
            "--kind",
            "identity",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.path().to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0);
        (
            std::fs::read(dir.path().join("second_order_identity.csv")).unwrap(),
            std::fs::read(dir.path().join("second_order_identity.json")).unwrap(),
        )
    };
    let (csv1, json1) = run();
    let (csv2, json2) = run();
    assert!(csv1 == csv2);
    assert_eq!(strip_timestamp(&json1), strip_timestamp(&json2));
}

#[test]
fn thread_cap_is_validated() {
    let out = Command::new(env!("CARGO_BIN_EXE_kirchhoff"))
        .args(["sweep", "--config", fixture("sweep_above_delta.json").to_str().unwrap()])
        .env("KIRCHHOFF_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&out), 65);
    let out = Command::new(env!("CARGO_BIN_EXE_kirchhoff"))
        .args(["sweep", "--config", fixture("sweep_above_delta.json").to_str().unwrap()])
        .env("KIRCHHOFF_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
}
