//! End-to-end tests of the `clfsynth` binary: exit-status contract,
//! artifact layout, schema diagnostics and byte-level determinism.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn workdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("clfsynth-test-{tag}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

fn run(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_clfsynth"));
    cmd.args(args);
    if let Some(t) = threads {
        cmd.env("RAYON_NUM_THREADS", t);
    }
    cmd.output().expect("binary runs")
}

fn fast_oscillator(out: &Path) -> String {
    format!(
        r#"{{
  "dynamics": {{"kind": "builtin", "name": "harmonic-oscillator"}},
  "epsilon": 0.1,
  "seed": 0,
  "jq_depth": 1,
  "radii": 24,
  "sphere_samples_per_dim": 64,
  "levels": 24,
  "shell_samples": 96,
  "fresh_samples": 2000,
  "check_samples": 4000,
  "x0": [1.0, 0.0],
  "t_end": 20.0,
  "output_dir": "{}"
}}"#,
        out.display()
    )
}

#[test]
fn check_writes_certificates_and_passes() {
    let dir = workdir("check");
    let out = dir.join("out");
    let cfg = write_config(&dir, "run.json", &fast_oscillator(&out));
    let res = run(&["--config", cfg.to_str().unwrap(), "check"], None);
    assert_eq!(
        res.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&res.stderr)
    );
    for name in ["h1.json", "h2.json", "h3.json", "weak_kernel.json"] {
        let path = out.join(name);
        assert!(path.exists(), "{name} missing");
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.contains("config_hash"));
    }
}

#[test]
fn degenerate_direction_fails_check_with_exit_2() {
    let dir = workdir("degenerate");
    let out = dir.join("out");
    let cfg = write_config(
        &dir,
        "run.json",
        &format!(
            r#"{{
  "dynamics": {{"kind": "builtin", "name": "two-link-manipulator"}},
  "g_dir": ["0", "0", "0", "0"],
  "check_samples": 4000,
  "output_dir": "{}"
}}"#,
            out.display()
        ),
    );
    let res = run(&["--config", cfg.to_str().unwrap(), "check"], None);
    assert_eq!(res.status.code(), Some(2));
    let h2 = fs::read_to_string(out.join("h2.json")).unwrap();
    assert!(h2.contains("\"verdict\": \"fail\""), "{h2}");
    assert!(h2.contains("witness"));
}

#[test]
fn missing_candidate_is_a_schema_error() {
    let dir = workdir("missing-v");
    let cfg = write_config(
        &dir,
        "run.json",
        r#"{
  "dynamics": {"kind": "affine", "state_dim": 2, "input_dim": 1,
               "f": ["x2", "-x1"], "g": [["0", "1"]]}
}"#,
    );
    let res = run(&["--config", cfg.to_str().unwrap(), "check"], None);
    assert_eq!(res.status.code(), Some(1));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("`v`"), "stderr: {err}");
}

#[test]
fn malformed_config_reports_the_field_path() {
    let dir = workdir("bad-field");
    let cfg = write_config(
        &dir,
        "run.json",
        r#"{"dynamics": {"kind": "builtin", "name": "harmonic-oscillator"}, "epsilon": "big"}"#,
    );
    let res = run(&["--config", cfg.to_str().unwrap(), "check"], None);
    assert_eq!(res.status.code(), Some(1));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("epsilon"), "stderr: {err}");
}

#[test]
fn usage_errors_exit_one() {
    let res = run(&["--definitely-not-a-flag"], None);
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn synthesize_simulate_report_round_trip() {
    let dir = workdir("roundtrip");
    let out = dir.join("out");
    let cfg = write_config(&dir, "run.json", &fast_oscillator(&out));
    let cfg_str = cfg.to_str().unwrap();

    let res = run(&["--config", cfg_str, "synthesize"], None);
    assert_eq!(
        res.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&res.stderr)
    );
    assert!(out.join("synthesis.json").exists());

    let res = run(&["--config", cfg_str, "simulate"], None);
    assert_eq!(
        res.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&res.stderr)
    );
    let csv = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert!(
        csv.starts_with("t,x1,x2,u1,d1,V,Vsharp,Utilde"),
        "header: {}",
        csv.lines().next().unwrap()
    );
    let summary = fs::read_to_string(out.join("summary.json")).unwrap();
    assert!(summary.contains("final_state_norm"));
    assert!(summary.contains("\"iiss_bound\": \"pass\""), "{summary}");

    let res = run(&["--config", cfg_str, "report"], None);
    assert_eq!(res.status.code(), Some(0));
    let delta = fs::read_to_string(out.join("delta.dat")).unwrap();
    assert_eq!(delta.lines().count(), 24, "one row per level");
    assert!(out.join("vsharp_vs_t.dat").exists());
}

#[test]
fn simulate_from_equilibrium_is_identically_zero() {
    let dir = workdir("equilibrium");
    let out = dir.join("out");
    let body = fast_oscillator(&out).replace("\"x0\": [1.0, 0.0]", "\"x0\": [0.0, 0.0]");
    let cfg = write_config(&dir, "run.json", &body);
    let res = run(&["--config", cfg.to_str().unwrap(), "simulate"], None);
    assert_eq!(res.status.code(), Some(0));
    let csv = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let cols: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        assert!(cols[1] == 0.0 && cols[2] == 0.0, "{line}");
    }
}

#[test]
fn report_without_artifacts_lists_missing_files() {
    let dir = workdir("no-artifacts");
    let out = dir.join("out");
    let cfg = write_config(&dir, "run.json", &fast_oscillator(&out));
    let res = run(&["--config", cfg.to_str().unwrap(), "report"], None);
    assert_eq!(res.status.code(), Some(1));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(
        err.contains("synthesis.json") && err.contains("trajectory.csv"),
        "{err}"
    );
}

#[test]
fn outputs_are_byte_identical_across_runs_and_worker_counts() {
    let dir = workdir("determinism");
    let out = dir.join("out");
    let cfg = write_config(&dir, "run.json", &fast_oscillator(&out));
    let cfg_str = cfg.to_str().unwrap();

    let res = run(&["--config", cfg_str, "iiss"], Some("1"));
    assert_eq!(
        res.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&res.stderr)
    );
    let first: Vec<Vec<u8>> = ["synthesis.json", "iiss.json"]
        .iter()
        .map(|name| fs::read(out.join(name)).unwrap())
        .collect();

    let res = run(&["--config", cfg_str, "iiss"], Some("4"));
    assert_eq!(res.status.code(), Some(0));
    for (name, before) in ["synthesis.json", "iiss.json"].iter().zip(first) {
        let after = fs::read(out.join(name)).unwrap();
        assert_eq!(before, after, "{name} differs across worker counts");
    }
}

#[test]
fn refusing_to_synthesize_is_a_verdict_failure() {
    let dir = workdir("refusal");
    let out = dir.join("out");
    let cfg = write_config(
        &dir,
        "run.json",
        &format!(
            r#"{{
  "dynamics": {{"kind": "builtin", "name": "harmonic-oscillator"}},
  "g_dir": ["0", "0"],
  "check_samples": 4000,
  "output_dir": "{}"
}}"#,
            out.display()
        ),
    );
    let res = run(&["--config", cfg.to_str().unwrap(), "synthesize"], None);
    assert_eq!(res.status.code(), Some(2));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("refusing"), "stderr: {err}");
}

#[test]
fn affine_input_yields_zero_correction_table() {
    let dir = workdir("zero-correction");
    let out = dir.join("out");
    let cfg = write_config(&dir, "run.json", &fast_oscillator(&out));
    let res = run(&["--config", cfg.to_str().unwrap(), "synthesize"], None);
    assert_eq!(res.status.code(), Some(0));
    let text = fs::read_to_string(out.join("synthesis.json")).unwrap();
    let value: serde_json::Value = serde_json::from_str(&text).unwrap();
    let big_omega = value["big_omega"]["v"].as_array().unwrap();
    assert!(big_omega.iter().all(|v| v.as_f64() == Some(0.0)));
}

#[test]
fn manipulator_check_passes_everything() {
    let dir = workdir("manip-check");
    let out = dir.join("out");
    let cfg = write_config(
        &dir,
        "run.json",
        &format!(
            r#"{{
  "dynamics": {{"kind": "builtin", "name": "two-link-manipulator"}},
  "jq_depth": 1,
  "check_samples": 8000,
  "output_dir": "{}"
}}"#,
            out.display()
        ),
    );
    let res = run(&["--config", cfg.to_str().unwrap(), "check"], None);
    assert_eq!(
        res.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&res.stderr)
    );
    for name in ["h1.json", "h2.json", "h3.json", "weak_kernel.json"] {
        let text = fs::read_to_string(out.join(name)).unwrap();
        assert!(text.contains("pass-on-region"), "{name}: {text}");
    }
}

#[test]
fn reference_simulation_reports_iiss_not_evaluated() {
    let dir = workdir("reference-sim");
    let out = dir.join("out");
    let cfg = write_config(
        &dir,
        "run.json",
        &format!(
            r#"{{
  "dynamics": {{"kind": "builtin", "name": "two-link-manipulator"}},
  "feedback": "reference",
  "x0": [1.0, -0.5, 0.5, 0.25],
  "t_end": 10.0,
  "disturbance": {{"kind": "constant", "values": [0.1, 0.1]}},
  "output_dir": "{}"
}}"#,
            out.display()
        ),
    );
    let res = run(&["--config", cfg.to_str().unwrap(), "simulate"], None);
    assert_eq!(
        res.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&res.stderr)
    );
    let summary = fs::read_to_string(out.join("summary.json")).unwrap();
    assert!(
        summary.contains("\"iiss_bound\": \"not-evaluated\""),
        "{summary}"
    );
    // Utilde column absent without the integral-gain construction.
    let csv = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert!(
        csv.starts_with("t,x1,x2,x3,x4,u1,u2,d1,d2,V,Vsharp\n"),
        "{}",
        csv.lines().next().unwrap()
    );
}
