use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn sit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sit")).args(args).output().unwrap()
}

fn sit_in(dir: &Path, args: &[&str]) -> Output {
    let mut all: Vec<&str> = args.to_vec();
    all.extend(["--out", dir.to_str().unwrap()]);
    sit(&all)
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn event_kinds(sidecar: &Value) -> Vec<String> {
    sidecar["events"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["kind"].as_str().unwrap().to_string())
        .collect()
}

#[test]
fn fig1_preset_writes_artifacts_and_passes_checks() {
    let dir = tempfile::tempdir().unwrap();
    let out = sit_in(dir.path(), &["simulate", "--preset", "fig1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("extinction (E <= 1) at t ="));
    let csv = std::fs::read_to_string(dir.path().join("fig1.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("t,E,F,M,Fs,Ms,u"));
    let sidecar = json(&dir.path().join("fig1.events.json"));
    assert!(event_kinds(&sidecar).contains(&"extinction".to_string()));
    assert_eq!(sidecar["config"]["law"]["law"], "emms");
    assert_eq!(sidecar["config"]["law"]["psi"], 122.5);
    let report = json(&dir.path().join("fig1.report.json"));
    assert_eq!(report["dominance_ok"], true);
    assert_eq!(report["lyapunov_decay_ok"], true);
    assert_eq!(report["envelope_ok"], true);
    assert!(report["extinction_time"].as_f64().unwrap() < 12_000.0);
    assert_eq!(report["fit_norm"], "euclidean");
}

#[test]
fn fig2_preset_reaches_extinction() {
    let dir = tempfile::tempdir().unwrap();
    let out = sit_in(dir.path(), &["simulate", "--preset", "fig2", "--quiet"]);
    assert!(out.status.success());
    let sidecar = json(&dir.path().join("fig2.events.json"));
    assert!(event_kinds(&sidecar).contains(&"extinction".to_string()));
    assert_eq!(sidecar["config"]["law"]["law"], "em");
}

#[test]
fn stop_on_extinction_ends_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = sit_in(
        dir.path(),
        &["simulate", "--preset", "fig1", "--stop-on-extinction", "--quiet"],
    );
    assert!(out.status.success());
    let sidecar = json(&dir.path().join("fig1.events.json"));
    assert_eq!(event_kinds(&sidecar), vec!["extinction"]);
    let t_ext = sidecar["events"][0]["time"].as_f64().unwrap();
    let csv = std::fs::read_to_string(dir.path().join("fig1.csv")).unwrap();
    let last_t: f64 = csv.lines().last().unwrap().split(',').next().unwrap().parse().unwrap();
    assert_eq!(last_t, t_ext);
}

#[test]
fn zero_law_stays_at_persistence() {
    let dir = tempfile::tempdir().unwrap();
    let out = sit_in(
        dir.path(),
        &["simulate", "--law", "zero", "--x0", "persistence", "--prefix", "zero", "--quiet"],
    );
    assert!(out.status.success());
    let sidecar = json(&dir.path().join("zero.events.json"));
    assert!(!event_kinds(&sidecar).contains(&"extinction".to_string()));
    let csv = std::fs::read_to_string(dir.path().join("zero.csv")).unwrap();
    let last: Vec<f64> = csv
        .lines()
        .last()
        .unwrap()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    let e_star = 50_000.0 * (1.0 - 1.0 / 61.25);
    let star = [e_star, 0.6125 * e_star, 0.255 * e_star, 0.0, 0.0];
    for (x, s) in last[1..6].iter().zip(star) {
        assert!((x - s).abs() <= 1e-3 * s.max(1.0), "{x} vs {s}");
    }
}

#[test]
fn analyze_reproduces_report_and_refuses_mismatches() {
    let dir = tempfile::tempdir().unwrap();
    assert!(sit_in(dir.path(), &["simulate", "--preset", "fig1", "--quiet"]).status.success());
    let csv = dir.path().join("fig1.csv");
    let events = dir.path().join("fig1.events.json");
    let (csv, events) = (csv.to_str().unwrap(), events.to_str().unwrap());
    let out = sit(&["analyze", "--csv", csv, "--events", events]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let original = std::fs::read(dir.path().join("fig1.report.json")).unwrap();
    assert_eq!(out.stdout, original);

    let same = sit(&["analyze", "--csv", csv, "--events", events, "--law", "emms", "--psi", "122.5"]);
    assert!(same.status.success());
    assert_eq!(same.stdout, original);

    let wrong_gain = sit(&["analyze", "--csv", csv, "--events", events, "--psi", "100"]);
    assert_eq!(wrong_gain.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&wrong_gain.stderr).contains("differs from the recorded"));

    assert!(sit_in(
        dir.path(),
        &["simulate", "--law", "zero", "--prefix", "zero", "--t-max", "50", "--quiet"]
    )
    .status
    .success());
    let zcsv = dir.path().join("zero.csv");
    let zev = dir.path().join("zero.events.json");
    let emms_flags = sit(&[
        "analyze",
        "--csv",
        zcsv.to_str().unwrap(),
        "--events",
        zev.to_str().unwrap(),
        "--law",
        "emms",
        "--psi",
        "122.5",
    ]);
    assert_eq!(emms_flags.status.code(), Some(4));
    let psi_on_zero = sit(&[
        "analyze",
        "--csv",
        zcsv.to_str().unwrap(),
        "--events",
        zev.to_str().unwrap(),
        "--psi",
        "122.5",
    ]);
    assert_eq!(psi_on_zero.status.code(), Some(4));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["simulate", "--preset", "fig7"],
        vec!["simulate", "--law", "emms", "--psi", "-1"],
        vec!["simulate", "--law", "zero", "--psi", "3"],
        vec!["simulate", "--x0", "1,2,3"],
        vec!["simulate", "--set", "params.gamma=3"],
        vec!["simulate", "--set", "law.sigma=3"],
        vec!["frobnicate"],
    ] {
        let out = sit_in(dir.path(), &args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn integration_failure_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = sit_in(
        dir.path(),
        &["simulate", "--preset", "fig1", "--method", "rk4", "--dt", "40", "--t-max", "400"],
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("t = "));
}

#[test]
fn config_file_matches_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        format!(
            "[params]\ngamma = 0.5\n[law]\nlaw = \"emms\"\npsi = 200\n[integrator]\nt_max = 100\n[outputs]\ndir = \"{}\"\nprefix = \"fromfile\"\n",
            dir.path().display()
        ),
    )
    .unwrap();
    assert!(sit(&["simulate", "--config", cfg.to_str().unwrap(), "--quiet"]).status.success());
    assert!(sit_in(
        dir.path(),
        &[
            "simulate", "--law", "emms", "--psi", "200", "--set", "params.gamma=0.5", "--t-max", "100", "--prefix",
            "fromfile2", "--quiet"
        ]
    )
    .status
    .success());
    let a = std::fs::read(dir.path().join("fromfile.csv")).unwrap();
    let b = std::fs::read(dir.path().join("fromfile2.csv")).unwrap();
    assert_eq!(a, b);
    let sidecar = json(&dir.path().join("fromfile.events.json"));
    assert_eq!(sidecar["config"]["params"]["gamma"], 0.5);
}

fn sweep_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn sweep_over_psi_multiples_of_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let threshold = 60.25;
    let values: Vec<String> = [0.5, 1.0, 1.5, 2.0].iter().map(|f| (f * threshold).to_string()).collect();
    let axis = format!("law.psi={}", values.join(","));
    let out = sit_in(dir.path(), &["sweep", "--preset", "fig1", "--axis", &axis]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = sweep_rows(&dir.path().join("fig1.sweep.csv"));
    let header = &rows[0];
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    assert_eq!(rows.len(), 5);
    for row in &rows[1..] {
        let psi: f64 = row[col("psi")].parse().unwrap();
        let reached = row[col("extinction_reached")] == "true";
        eprintln!("sweep psi = {psi}: extinction reached = {reached}, time = {}", row[col("extinction_time")]);
        assert_eq!(row[col("stabilizing_predicted")], (psi > threshold).to_string());
        if psi > threshold {
            assert!(reached);
            assert!(!row[col("c_bound")].is_empty());
        }
    }
}

#[test]
fn sweep_over_gamma_shifts_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let out = sit_in(
        dir.path(),
        &["sweep", "--preset", "fig1", "--t-max", "20", "--axis", "params.gamma=0.25,0.5,1"],
    );
    assert!(out.status.success());
    let rows = sweep_rows(&dir.path().join("fig1.sweep.csv"));
    let col = rows[0].iter().position(|h| h == "gain_threshold").unwrap();
    let thresholds: Vec<f64> = rows[1..].iter().map(|r| r[col].parse().unwrap()).collect();
    assert_eq!(thresholds, vec![241.0, 120.5, 60.25]);
}

#[test]
fn sweep_cap_and_empty_axes() {
    let dir = tempfile::tempdir().unwrap();
    let out = sit_in(
        dir.path(),
        &["sweep", "--preset", "fig1", "--cap", "3", "--axis", "law.psi=70,80", "--axis", "params.gamma=0.5,1"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("4 grid points"));

    let out = sit_in(dir.path(), &["sweep", "--preset", "fig1", "--t-max", "30"]);
    assert!(out.status.success());
    let rows = sweep_rows(&dir.path().join("fig1.sweep.csv"));
    assert_eq!(rows.len(), 2);
}

#[test]
fn params_prints_derived_quantities() {
    let out = sit(&["params"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("\"R\": 61.25"));
    assert!(text.contains("gain threshold (R-1)/gamma = 60.25"));
    let out = sit(&["params", "--set", "gamma=0.5"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("gain threshold (R-1)/gamma = 120.5"));
    assert_eq!(sit(&["params", "--set", "bogus=1"]).status.code(), Some(2));
}
