use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bridgeflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bridgeflow"))
        .args(args)
        .env_remove("BRIDGEFLOW_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = bridgeflow(args);
    assert!(
        out.status.success(),
        "bridgeflow {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn column(path: &Path, name: &str) -> Vec<String> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let idx = lines.next().unwrap().split(',').position(|h| h == name).unwrap();
    lines.map(|l| l.split(',').nth(idx).unwrap().to_string()).collect()
}

#[test]
fn schedule_dump_prints_the_shifted_grid() {
    let out = ok(&["schedule", "dump", "--N", "4", "--gamma", "5"]);
    assert_eq!(out, "i,t\n0,0\n1,0.0625\n2,0.16666666666666666\n3,0.375\n4,1\n");
}

#[test]
fn oracle_sampling_is_exact_and_echoes_the_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("oracle");
    ok(&["sample", "--oracle", "--mode", "corrected", "--N", "4", "--gamma", "5", "--seed", "1", "--out-dir", s(&out)]);
    let report = json(&out.join("report.json"));
    assert!(report["paired_mse"].as_f64().unwrap() <= 1e-10);
    let manifest = json(&out.join("manifest.json"));
    let schedule: Vec<f64> = serde_json::from_value(manifest["config"]["schedule"].clone()).unwrap();
    let want = [0.0, 0.0625, 1.0 / 6.0, 0.375, 1.0];
    for (a, b) in schedule.iter().zip(want) {
        assert!((a - b).abs() < 1e-15);
    }
    assert_eq!(manifest["command"], "sample");
    assert_eq!(manifest["seed"], 1);
}

#[test]
fn standard_mode_keeps_last_step_noise() {
    let dir = tempfile::tempdir().unwrap();
    let mut mse = Vec::new();
    for mode in ["standard", "corrected"] {
        let out = dir.path().join(mode);
        ok(&["sample", "--oracle", "--mode", mode, "--N", "8", "--runs", "10000", "--seed", "2", "--out-dir", s(&out)]);
        mse.push(json(&out.join("report.json"))["paired_mse"].as_f64().unwrap());
    }
    // Per coordinate: s^2 / N with D = 2 coordinates.
    let per_coord = mse[0] / 2.0;
    assert!((per_coord / 0.125 - 1.0).abs() < 0.05, "{per_coord}");
    assert!(mse[1] < 1e-20, "{}", mse[1]);
}

#[test]
fn env_var_sets_the_default_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_bridgeflow"))
        .args(["profile", "--objective", "stabilized"])
        .env("BRIDGEFLOW_OUT_DIR", dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    assert!(dir.path().join("profile_stabilized.csv").exists());
    assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn profile_writes_csv_and_svg() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["profile", "--svg", "--intervals", "99", "--out-dir", s(dir.path())]);
    for kind in ["displacement", "velocity", "stabilized"] {
        let t = column(&dir.path().join(format!("profile_{kind}.csv")), "t");
        assert_eq!(t.len(), 100);
        assert_eq!(t.last().unwrap(), "0.999");
    }
    let svg = fs::read_to_string(dir.path().join("profile.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 6);
    let outputs = json(&dir.path().join("manifest.json"))["outputs"].clone();
    assert_eq!(outputs.as_array().unwrap().len(), 4);
}

fn train_into(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let out = dir.join(name);
    let mut args = vec!["train", "--seed", "7", "--out-dir", s(&out)];
    args.extend_from_slice(extra);
    ok(&args);
    out
}

#[test]
fn flags_override_config_file_which_overrides_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    fs::write(
        &config,
        r#"{"train": {"steps": 12, "log_every": 4, "objective": "velocity", "learning_rate": 0.01}, "model": {"hidden": [8]}}"#,
    )
    .unwrap();
    let out = train_into(dir.path(), "run", &["--config", s(&config), "--objective", "displacement", "--lr", "0.002"]);
    let manifest = json(&out.join("manifest.json"));
    let train = &manifest["config"]["train"];
    assert_eq!(train["steps"], 12);
    assert_eq!(train["objective"], "displacement");
    assert_eq!(train["learning_rate"], 0.002);
    assert_eq!(train["batch_size"], 64);
    assert_eq!(manifest["config"]["model"]["hidden"], serde_json::json!([8]));
    assert_eq!(column(&out.join("stats.csv"), "step"), ["4", "8", "12"]);
}

#[test]
fn a_manifest_reproduces_its_run() {
    let dir = tempfile::tempdir().unwrap();
    let first = train_into(dir.path(), "first", &["--steps", "40", "--hidden", "16", "--s", "0.5"]);
    let manifest = first.join("manifest.json");
    let second = train_into(dir.path(), "second", &["--config", s(&manifest)]);
    assert_eq!(
        fs::read(first.join("model.bin")).unwrap(),
        fs::read(second.join("model.bin")).unwrap()
    );
}

#[test]
fn objectives_consume_the_same_stream() {
    let dir = tempfile::tempdir().unwrap();
    let hashes: Vec<Value> = ["velocity", "stabilized", "displacement"]
        .iter()
        .map(|kind| {
            let out = train_into(dir.path(), kind, &["--objective", kind, "--steps", "20", "--debug"]);
            json(&out.join("manifest.json"))["results"]["stream_sha256"].clone()
        })
        .collect();
    assert!(hashes[0].is_string());
    assert!(hashes.iter().all(|h| h == &hashes[0]));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| bridgeflow(args).status.code().unwrap();
    // Usage: missing mandatory seed, unknown command, invalid value.
    assert_eq!(code(&["train", "--steps", "1"]), 2);
    assert_eq!(code(&["frobnicate"]), 2);
    assert_eq!(code(&["train", "--seed", "1", "--batch-size", "0", "--out-dir", s(dir.path())]), 2);
    assert_eq!(code(&["sample", "--seed", "1"]), 2);
    // Check failure.
    assert_eq!(code(&["verify", "--suite", "bridge", "--mc", "1000", "--tol-rel", "1e-9"]), 1);
    // Numerical blow-up.
    let blown = dir.path().join("blown");
    assert_eq!(
        code(&["train", "--seed", "1", "--objective", "velocity", "--optimizer", "sgd", "--lr", "1e300", "--steps", "50", "--out-dir", s(&blown)]),
        3
    );
    let manifest = json(&blown.join("manifest.json"));
    assert_eq!(manifest["results"]["status"], "aborted");
    assert!(!blown.join("model.bin").exists());
    assert_eq!(code(&["--version"]), 0);
}

#[test]
fn sample_rejects_a_model_for_another_task() {
    let dir = tempfile::tempdir().unwrap();
    let run = train_into(dir.path(), "shift", &["--steps", "2", "--hidden", "4"]);
    let out = bridgeflow(&[
        "sample", "--params", s(&run.join("model.bin")), "--task", "signal_refine", "--seed", "1",
        "--out-dir", s(&dir.path().join("bad")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn verify_sampler_suite_reports_exactness() {
    let out = ok(&["verify", "--suite", "sampler", "--seed", "3"]);
    let report: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(report["passed"], true);
    let checks = report["checks"].as_array().unwrap();
    let exact: Vec<_> = checks
        .iter()
        .filter(|c| c["name"].as_str().unwrap().starts_with("corrected oracle endpoint mse"))
        .collect();
    assert_eq!(exact.len(), 30);
    assert!(exact.iter().all(|c| c["bound"].as_f64() == Some(1e-20)));
}

#[test]
fn simulate_matches_bridge_variance() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["simulate", "--task", "grid_colorize", "--count", "400", "--s", "2", "--out-dir", s(dir.path())]);
    let path = dir.path().join("bridge.csv");
    let empirical = column(&path, "empirical_variance");
    let exact = column(&path, "bridge_variance");
    for (e, x) in empirical.iter().zip(&exact) {
        let (e, x): (f64, f64) = (e.parse().unwrap(), x.parse().unwrap());
        assert!((e - x).abs() <= 0.05 * x + 1e-12, "{e} vs {x}");
    }
    assert_eq!(fs::read_to_string(dir.path().join("pairs.csv")).unwrap().lines().count(), 401);
}

#[test]
fn ablation_over_sampler_steps_uses_one_model() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("steps");
    ok(&["ablate", "--axis", "steps", "--values", "4,8,16,64", "--steps", "1500", "--seed", "7", "--out-dir", s(&out)]);
    let path = out.join("summary.csv");
    assert!(column(&path, "status").iter().all(|v| v == "ok"));
    let losses = column(&path, "final_loss");
    assert!(losses.iter().all(|l| l == &losses[0]));
    // Every cell scores the same evaluation pairs.
    let source = column(&path, "source_energy_distance");
    assert!(source.iter().all(|v| v == &source[0]));
}

#[test]
fn ablation_over_objectives_orders_stabilized_before_velocity() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("objectives");
    ok(&[
        "ablate", "--axis", "objective", "--values", "displacement,velocity,stabilized", "--seed", "7",
        "--out-dir", s(&out),
    ]);
    let path = out.join("summary.csv");
    let ed: Vec<f64> = column(&path, "energy_distance").iter().map(|v| v.parse().unwrap()).collect();
    assert!(ed[2] <= ed[1], "{ed:?}");
}

#[test]
fn ablation_needs_two_values() {
    let out = bridgeflow(&["ablate", "--axis", "gamma", "--values", "2", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(2));
}
