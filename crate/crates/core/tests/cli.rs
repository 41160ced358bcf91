//! End-to-end runs of the `kg` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn kg(sub: &str, config: &str, dir: &Path) -> Output {
    let cfg = dir.join("run.cfg");
    fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_kg"))
        .args([sub, "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn num(v: &Value) -> f64 {
    v.as_f64().unwrap_or_else(|| panic!("not a number: {v}"))
}

const SMALL: &str = "gamma = -1\nL = 20\nn = 401\n";

#[test]
fn profile_writes_constants_and_embeds_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = kg("profile", SMALL, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let j = json(&dir.path().join("out/profile.json"));
    assert!((num(&j["c_Q"]) - 8f64.sqrt()).abs() < 1e-14);
    assert!((num(&j["J0_Q"]) - 4.0 / 3.0).abs() < 1e-12);
    assert!((num(&j["n_gamma"]) - 4.0 / 3.0).abs() < 1e-12);
    assert!((num(&j["r_gamma"]) - 2.25).abs() < 1e-12);
    assert_eq!(j["incomplete"], Value::Bool(false));
    assert_eq!(j["config"]["n"], 401);
    assert_eq!(j["config"]["mu"].as_f64(), Some(0.1));

    let csv = fs::read_to_string(dir.path().join("out/profile.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# kg profile "));
    assert_eq!(lines.next().unwrap(), "x,Q,Q_gamma,Q_deriv,phi");
    assert_eq!(lines.count(), 401);
}

#[test]
fn config_errors_exit_2_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let out = kg("simulate", "gamma = -1\n\nalpha = -2\n", dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));

    let out = kg("simulate", "n = 400\n", dir.path());
    assert_eq!(out.status.code(), Some(2));

    // family room only matters to commands that build the family
    let out = kg("shoot", "L = 12\nn = 241\n", dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = kg("profile", "L = 12\nn = 241\n", dir.path());
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn numeric_failures_exit_3_and_mark_incomplete() {
    let dir = tempfile::tempdir().unwrap();
    // both bracket ends decay
    let out = kg(
        "shoot",
        "gamma = -1\nL = 30\nn = 1201\nlambda_lo = -0.9\nlambda_hi = -0.8\nt_max = 20\n",
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3));
    let j = json(&dir.path().join("out/shoot.json"));
    assert_eq!(j["incomplete"], Value::Bool(true));
    assert!(j["error"].as_str().unwrap().contains("bracket"));
}

#[test]
fn simulate_snapshot_round_trip_continues_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!("{SMALL}initial = family\nlambda = -0.1\nz0 = 4\nT = 2\n");
    let out = kg("simulate", &cfg, dir.path());
    assert!(out.status.success());
    let s = json(&dir.path().join("out/simulate.json"));
    assert_eq!(s["exit"], "completed");
    assert!(num(&s["identity_defect"]) < 1e-3);
    assert!(num(&s["worst_energy_increase_rate"]) <= 1e-12);

    // restart from the final snapshot
    let snap = dir.path().join("out/final.csv");
    let dir2 = tempfile::tempdir().unwrap();
    let cfg2 = format!("{SMALL}initial = snapshot\ninitial_file = {}\nT = 1\n", snap.display());
    let out = kg("simulate", &cfg2, dir2.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let s2 = json(&dir2.path().join("out/simulate.json"));
    assert!(num(&s2["energy_initial"]) <= num(&s["energy_initial"]));
}

#[test]
fn snapshot_on_a_different_grid_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    assert!(kg("simulate", &format!("{SMALL}T = 0.5\n"), dir.path()).status.success());
    let snap = dir.path().join("out/final.csv");
    let dir2 = tempfile::tempdir().unwrap();
    let out = kg(
        "simulate",
        &format!("gamma = -1\nL = 20\nn = 801\ninitial = snapshot\ninitial_file = {}\n", snap.display()),
        dir2.path(),
    );
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn check_passes_on_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let out = kg("check", SMALL, dir.path());
    let j = json(&dir.path().join("out/check.json"));
    assert_eq!(out.status.code(), Some(0), "{j}");
    assert_eq!(j["failed"], 0);
    assert_eq!(j["checks"].as_object().unwrap().len(), kgdelta::cli::check_names().len());
}

#[test]
fn variational_both_sectors() {
    let dir = tempfile::tempdir().unwrap();
    let out = kg("variational", "gamma = -1\nz0 = 3\n", dir.path());
    assert!(out.status.success());
    let j = json(&dir.path().join("out/variational.json"));
    let even = &j["runs"]["even"];
    let free = &j["runs"]["none"];
    assert!((num(&even["level_estimate"]) - 2.25).abs() / 2.25 < 1e-2);
    assert!((num(&free["level_estimate"]) - 4.0 / 3.0).abs() / (4.0 / 3.0) < 1e-2);
    assert_eq!(free["escaped"], Value::Bool(true));
    assert!(dir.path().join("out/variational_even.csv").exists());
    assert!(dir.path().join("out/variational_none.csv").exists());
}

#[test]
fn track_with_explicit_lambda() {
    let dir = tempfile::tempdir().unwrap();
    let out = kg("track", "gamma = -1\nL = 30\nn = 1201\nz0 = 5\ntrack_lambda = 0\nt_track = 4\n", dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let j = json(&dir.path().join("out/track.json"));
    assert!(j.get("threshold").is_none());
    assert!(j["frames"].as_u64().unwrap() > 5);
    let csv = fs::read_to_string(dir.path().join("out/frames.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().starts_with("t,z,a_plus,a_minus,a_zero,scriptE,scriptG,eps_normH"));
}

#[test]
fn worker_count_does_not_change_results() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let base = "gamma = -1\nL = 30\nn = 1201\ntol = 1e-6\nt_max = 100\n";
    assert!(kg("shoot", &format!("{base}workers = 1\n"), a.path()).status.success());
    assert!(kg("shoot", &format!("{base}workers = 4\n"), b.path()).status.success());
    let ta = json(&a.path().join("out/shoot.json"))["threshold"].clone();
    let tb = json(&b.path().join("out/shoot.json"))["threshold"].clone();
    assert_eq!(ta, tb);
}
