use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_criot");

fn repo(path: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(path)
}

fn criot(args: &[&str], out: &Path) -> Output {
    let out = Command::new(BIN)
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs");
    out
}

fn ok(args: &[&str], out: &Path) {
    let o = criot(args, out);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

type Rows = Vec<HashMap<String, String>>;

fn read(path: &Path) -> Rows {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header: Vec<String> = r.headers().unwrap().iter().map(str::to_string).collect();
    r.records()
        .map(|rec| header.iter().cloned().zip(rec.unwrap().iter().map(str::to_string)).collect())
        .collect()
}

fn f(row: &HashMap<String, String>, key: &str) -> f64 {
    row[key].parse().unwrap_or_else(|_| panic!("{key} = {:?}", row[key]))
}

#[test]
fn reference_config_reproduces_golden_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let config = repo("configs/reference.json");
    ok(&["analyze", "--config", config.to_str().unwrap()], dir.path());
    let got = std::fs::read(dir.path().join("metrics.csv")).unwrap();
    let want = std::fs::read(repo("crates/cli/tests/golden/metrics.csv")).unwrap();
    assert_eq!(String::from_utf8(got).unwrap(), String::from_utf8(want).unwrap());
    let stationary = read(&dir.path().join("stationary.csv"));
    assert_eq!(stationary.len(), 64);
    let total: f64 = stationary.iter().map(|r| f(r, "prob")).sum();
    assert!((total - 1.0).abs() < 1e-10);
}

#[test]
fn malformed_config_fails_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ \"params\": { \"traffic\": { \"lambda\": \"fast\" } } }").unwrap();
    let out = dir.path().join("out");
    let o = criot(&["analyze", "--config", bad.to_str().unwrap()], &out);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("not a valid run config"));
    assert!(!out.exists());

    let o = criot(&["analyze", "--theta", "1.5"], &out);
    assert!(!o.status.success());
    assert!(!out.exists());
}

#[test]
fn forced_idleness_row() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["analyze", "--theta", "1"], dir.path());
    let rows = read(&dir.path().join("metrics.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(f(&rows[0], "p_b"), 1.0);
    assert_eq!(rows[0]["feasible"], "false");
    assert_eq!(rows[0]["w_slot_avg"], "");
}

#[test]
fn matrix_emission_lists_stochastic_rows() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["analyze", "--k", "3", "--matrix"], dir.path());
    let rows = read(&dir.path().join("matrix.csv"));
    let mut sums: HashMap<(String, String, String), f64> = HashMap::new();
    for r in &rows {
        let key = (r["from_i"].clone(), r["from_phi"].clone(), r["from_psi"].clone());
        *sums.entry(key).or_default() += f(r, "prob");
    }
    assert_eq!(sums.len(), 22);
    assert!(sums.values().all(|s| (s - 1.0).abs() < 1e-10));
}

#[test]
fn simulation_is_reproducible_and_pooled() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["simulate", "--seed", "11", "--replications", "8", "--horizon", "50000"];
    ok(&args, a.path());
    ok(&args, b.path());
    let sa = std::fs::read(a.path().join("sim.csv")).unwrap();
    let sb = std::fs::read(b.path().join("sim.csv")).unwrap();
    assert_eq!(sa, sb);
    let rows = read(&a.path().join("sim.csv"));
    assert_eq!(rows.len(), 9);
    assert_eq!(rows[8]["replication"], "pooled");
    assert!(rows.iter().all(|r| r["seed"] == "11" && r["generator"].contains("ChaCha8")));
}

#[test]
fn simulation_tracks_analysis_at_reference_point() {
    let dir = tempfile::tempdir().unwrap();
    let config = repo("configs/reference.json");
    ok(&["analyze", "--config", config.to_str().unwrap()], dir.path());
    ok(&["simulate", "--config", config.to_str().unwrap()], dir.path());
    let m = &read(&dir.path().join("metrics.csv"))[0];
    let s = read(&dir.path().join("sim.csv"));
    let pooled = s.last().unwrap();
    assert!((f(m, "p_b") - f(pooled, "p_b")).abs() <= 0.005);
    assert!((f(m, "p_i") - f(pooled, "p_i")).abs() <= 0.005);
    assert!((f(m, "carried_load") - f(pooled, "carried_load")).abs() <= 0.003);
    assert!((f(m, "w_slot_avg") / f(pooled, "w") - 1.0).abs() <= 0.1);
}

#[test]
fn single_point_sweep_matches_analysis_verdict() {
    let dir = tempfile::tempdir().unwrap();
    for p_d in ["0.5", "0.9"] {
        ok(&["analyze", "--p-d", p_d], dir.path());
        ok(&["sweep", "--axis", "detection", "--target", "beta-c", "--grid", p_d], dir.path());
        let m = &read(&dir.path().join("metrics.csv"))[0];
        let s = &read(&dir.path().join("sweep.csv"))[0];
        assert_eq!(m["feasible"], s["feasible"]);
        assert_eq!(m["p_b"], s["p_b"]);
        assert_eq!(s["axis_name"], "p_d");
        assert_eq!(s["critical_name"], "beta_c");
    }
}

#[test]
fn sweep_output_follows_input_order() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let sweep = ["sweep", "--axis", "false-alarm", "--target", "lambda-c"];
    ok(&[&sweep[..], &["--grid", "0.1,0.3,0.05"]].concat(), a.path());
    ok(&[&sweep[..], &["--grid", "0.05,0.1,0.3"]].concat(), b.path());
    let ra = read(&a.path().join("sweep.csv"));
    let rb = read(&b.path().join("sweep.csv"));
    let values: Vec<&str> = ra.iter().map(|r| r["axis_value"].as_str()).collect();
    assert_eq!(values, ["0.1", "0.3", "0.05"]);
    assert_eq!(ra[0], rb[1]);
    assert_eq!(ra[1], rb[2]);
    assert_eq!(ra[2], rb[0]);
}

#[test]
fn detection_sweep_is_monotone() {
    let dir = tempfile::tempdir().unwrap();
    let config = repo("configs/region_pd_beta.json");
    ok(&["sweep", "--config", config.to_str().unwrap()], dir.path());
    let rows = read(&dir.path().join("sweep.csv"));
    assert_eq!(rows.len(), 11);
    let crit: Vec<f64> = rows.iter().map(|r| f(r, "critical_value")).collect();
    assert!(crit.windows(2).all(|w| w[1] >= w[0]), "{crit:?}");
}

#[test]
fn comparison_orders_and_echoes_grid() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["compare", "--p-d", "1", "--p-f", "0", "--lambdas", "0.0005,0.002,0.0035", "--horizon", "300000"];
    ok(&args, a.path());
    ok(&args, b.path());
    let ta = std::fs::read(a.path().join("compare.csv")).unwrap();
    assert_eq!(ta, std::fs::read(b.path().join("compare.csv")).unwrap());
    let rows = read(&a.path().join("compare.csv"));
    let grid: Vec<&str> = rows.iter().map(|r| r["lambda"].as_str()).collect();
    assert_eq!(grid, ["0.0005", "0.002", "0.0035"]);
    for r in &rows {
        assert!(f(r, "w_sync_baseline") <= f(r, "w_sim"));
    }
}

#[test]
fn sweep_without_spec_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = criot(&["sweep", "--axis", "detection"], &dir.path().join("x"));
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("sweep"));
}
