use std::path::Path;
use std::process::{Command, Output};

fn damp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_damp")).args(args).output().unwrap()
}

const TINY: &str = r#"{
  "network": {
    "num_aps": 4, "antennas_per_ap": 2, "num_devices": 12, "area_side": 1.0,
    "pilot_length": 8, "activity_prob": 0.2, "max_power": 23.0,
    "bandwidth": 1e6, "noise_psd": -169.0, "shadow_std": 4.0,
    "pathloss_intercept": -140.6, "pathloss_exponent_coeff": 36.7,
    "fading_model": "iid_rayleigh", "rng_seed": 7
  },
  "schemes": ["camp", "damp", "hard_fusion"],
  "power_schemes": ["full"],
  "dcc": ["all_aps", {"top_c": 2}],
  "trials": 2,
  "amp_iterations": 4,
  "calibration_trials": 2
}"#;

fn write_config(dir: &Path) -> String {
    let p = dir.join("tiny.json");
    std::fs::write(&p, TINY).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn empty_suite_selector_is_a_usage_error() {
    let out = damp(&["verify", "--suite", ""]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn unknown_suite_is_rejected() {
    let out = damp(&["verify", "--suite", "nonsense"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn verify_prints_a_json_report() {
    let out = damp(&["verify", "--suite", "additivity"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["passed"], true);
    assert!(!report["checks"].as_array().unwrap().is_empty());
}

#[test]
fn run_writes_outputs_and_honours_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("out");
    let status = damp(&["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--trials", "3", "--seed", "11", "--workers", "2"]);
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    for f in ["llr.csv", "roc.csv", "timing.csv", "manifest.json"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["trials_completed"], 3);
    assert_eq!(manifest["master_seed"], 11);
}

#[test]
fn bad_config_exits_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    std::fs::write(&p, r#"{"schemes": ["omp"], "power_schemes": ["full"], "trials": 1}"#).unwrap();
    let out = damp(&["run", "--config", p.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn timing_prints_means() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = damp(&["timing", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines[0], "scheme,dcc,L,mean_seconds");
    assert_eq!(lines.len(), 1 + 3 * 2);
    assert!(dir.path().join("timing.csv").is_file());
}
