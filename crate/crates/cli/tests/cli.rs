use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tdse-toolkit"))
        .args(args)
        .current_dir(dir)
        .env_remove("TDSE_TOOLKIT_JOBS")
        .output()
        .unwrap()
}

fn small_config(dir: &Path, extra: &str) -> String {
    let text = format!(
        r#"{{
  "model": {{"kind": "rotor", "j_max": 4, "b": 1.0, "mu0": 1.0}},
  "field": {{"kind": "sinusoid", "eps_max": 1.0, "omega": 1.0}},
  "horizon": 2.0,
  "dt_sweep": {{"n_min": 16, "n_max": 256}},
  "reference": {{"tol": 1e-11, "start_n": 256, "max_n": 1048576}}{extra}
}}"#
    );
    let path = dir.join("exp.json");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn propagate_writes_a_normalized_state() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), "");
    for scheme in ["toolkit", "improved-low", "improved_high", "quantified-high", "strang", "reference"] {
        let out = run(
            dir.path(),
            &["propagate", "--config", &config, "--scheme", scheme, "--n-steps", "64", "--out", "psi.csv"],
        );
        assert!(out.status.success(), "{scheme}: {}", String::from_utf8_lossy(&out.stderr));
        let text = fs::read_to_string(dir.path().join("psi.csv")).unwrap();
        let norm: f64 = text
            .lines()
            .skip(1)
            .map(|l| {
                let f: Vec<f64> = l.split(',').skip(1).map(|t| t.parse().unwrap()).collect();
                f[0] * f[0] + f[1] * f[1]
            })
            .sum();
        assert!((norm - 1.0).abs() < 1e-12, "{scheme}");
        assert_eq!(text.lines().count(), 1 + 5);
    }
}

#[test]
fn build_then_propagate_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), "");
    let out = run(dir.path(), &["build", "--config", &config, "--n-steps", "32", "--m", "16", "--out", "tk"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("tk/manifest.json").exists());
    let out = run(
        dir.path(),
        &["propagate", "--config", &config, "--scheme", "toolkit", "--n-steps", "32", "--toolkit", "tk", "--trajectory", "traj.csv"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let traj = fs::read_to_string(dir.path().join("traj.csv")).unwrap();
    assert_eq!(traj.lines().count(), 1 + 33 * 5);
}

#[test]
fn convergence_emits_reports() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), "");
    let out = run(dir.path(), &["convergence", "--config", &config, "--out", "conv"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["convergence.csv", "convergence_report.json", "convergence_plot.csv", "convergence_plot.json"] {
        assert!(dir.path().join("conv").join(f).exists(), "{f}");
    }
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("toolkit") && stdout.contains("slope"));
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"horizon": 1.0, "nonsense": true}"#).unwrap();
    let out = run(dir.path(), &["convergence", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let out = run(dir.path(), &["propagate", "--config", "missing.json", "--scheme", "toolkit", "--n-steps", "4"]);
    assert_eq!(out.status.code(), Some(1));
    let config = small_config(dir.path(), "");
    let out = run(dir.path(), &["cost-table", "--config", &config, "--tol", "-1"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unreachable_tolerance_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), r#", "cost": {"n_max": 8, "m_max": 16, "schemes": ["strang"]}"#);
    let out = run(dir.path(), &["cost-table", "--config", &config, "--tol", "1e-10", "--out", "cost"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("cost/cost_table.csv").exists());
    assert!(String::from_utf8_lossy(&out.stderr).contains("tolerance not reached"));
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["propagate", "--scheme", "nope", "--n-steps", "4"]).status.code(), Some(1));
    assert_eq!(run(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(dir.path(), &["--help"]).status.code(), Some(0));
}
