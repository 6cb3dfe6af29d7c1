use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn ncphase(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ncphase")).args(args).current_dir(dir).output().unwrap()
}

fn write_json(dir: &Path, name: &str, v: &Value) {
    std::fs::write(dir.join(name), serde_json::to_vec_pretty(v).unwrap()).unwrap();
}

fn report(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

fn scenario() -> Value {
    json!({
        "field": { "alpha_x": 1.0, "alpha_y": 2.0, "beta_x": 1.0, "beta_y": 2.0, "e": 1.0, "c": 1.0, "m_p": 1.0 },
        "coeffs": { "x1": 0.4, "x2": -0.3, "x3": 1.0, "y3": 2.0 },
        "params": { "theta": 0.1, "f_theta": 0.6 }
    })
}

#[test]
fn check_map_rejects_wrong_theta() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let map = json!({ "dim": 2, "hbar": 1.0,
        "A": [[1.0, 0.0], [0.0, 1.0]], "B": [[0.0, -0.5], [0.5, 0.0]],
        "C": [[0.0, 0.0], [0.0, 0.0]], "D": [[1.0, 0.0], [0.0, 1.0]] });
    write_json(d, "m.json", &map);
    write_json(d, "good.json", &json!({ "dim": 2, "hbar": 1.0, "theta": [[0.0, 1.0], [-1.0, 0.0]] }));
    write_json(d, "bad.json", &json!({ "dim": 2, "hbar": 1.0, "theta": [[0.0, 2.0], [-2.0, 0.0]] }));
    let ok = ncphase(d, &["check-map", "--map", "m.json", "--theta", "good.json", "--json"]);
    assert_eq!(ok.status.code(), Some(0));
    let bad = ncphase(d, &["check-map", "--map", "m.json", "--theta", "bad.json", "--json"]);
    assert_eq!(bad.status.code(), Some(1));
    assert_eq!(report(&bad)["status"], "fail");
}

#[test]
fn io_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = ncphase(d, &["check-map", "--map", "missing.json", "--theta", "missing.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.json"));

    std::fs::write(d.join("bad.json"), b"{\"dim\": 2, \"extra\": 1}").unwrap();
    let out = ncphase(d, &["check-map", "--map", "bad.json", "--theta", "bad.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn report_goes_to_out_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let args = ["solve2d", "--theta", "1", "--eta", "2", "--f-theta", "2", "--f-eta", "4", "--f-theta-y", "1"];
    let out = ncphase(d, &[&args[..], &["--json", "--out", "r.json"]].concat());
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    let r: Value = serde_json::from_slice(&std::fs::read(d.join("r.json")).unwrap()).unwrap();
    assert_eq!(r["result"]["f_theta_x"], 3.0);
}

#[test]
fn gen3d_and_solve3d_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let a = ncphase(d, &["gen3d", "--seed", "7", "--count", "3", "--json"]);
    let b = ncphase(d, &["gen3d", "--seed", "7", "--count", "3", "--json"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let r = report(&a);
    assert_eq!(r["result"].as_array().unwrap().len(), 3);

    write_json(d, "p.json", &r["result"][1]);
    let s = ncphase(d, &["solve3d", "--input", "p.json", "--json"]);
    assert_eq!(s.status.code(), Some(0));
    assert_eq!(report(&s)["metrics"]["iterations"], 0.0);

    let s = ncphase(d, &["solve3d", "--seed", "3", "--perturb", "1e-3", "--trace", "--json"]);
    assert_eq!(s.status.code(), Some(0));
    assert!(!report(&s)["result"]["history"].as_array().unwrap().is_empty());

    let mut frozen = r["result"][0].clone();
    frozen["f_theta_diag"] = json!([0.0, 0.0, 0.0]);
    frozen["f_theta_off"] = json!([0.0, 0.0, 0.0]);
    frozen["f_eta_diag"] = json!([0.0, 0.0, 0.0]);
    frozen["f_eta_off"] = json!([0.0, 0.0, 0.0]);
    frozen["theta"] = json!([0.5, 0.2, -0.3]);
    frozen["eta"] = json!([0.1, -0.4, 0.6]);
    write_json(d, "frozen.json", &frozen);
    let s = ncphase(d, &["solve3d", "--input", "frozen.json", "--freeze", "all", "--json"]);
    assert_eq!(s.status.code(), Some(1));
    let m = &report(&s)["metrics"];
    assert!(m["residual_max"].as_f64().unwrap() >= m["sw_obstruction"].as_f64().unwrap());
}

#[test]
fn simulate_writes_hat_columns_only_when_matched() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_json(d, "s.json", &scenario());
    let out = ncphase(d, &["simulate", "--scenario", "s.json", "--out", "t.csv", "--steps", "1024", "--json"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let csv = std::fs::read_to_string(d.join("t.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1026);
    assert!(!csv.lines().nth(1).unwrap().ends_with(",,,,"));

    let mut sym = scenario();
    sym["field"] =
        json!({ "alpha_x": 0.0, "alpha_y": 0.5, "beta_x": -0.5, "beta_y": 0.0, "e": 1.0, "c": 1.0, "m_p": 1.0 });
    write_json(d, "sym.json", &sym);
    let out = ncphase(d, &["simulate", "--scenario", "sym.json", "--out", "u.csv", "--steps", "2048", "--json"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(report(&out)["result"]["matched"], false);
    let csv = std::fs::read_to_string(d.join("u.csv")).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",,,,")));
}

#[test]
fn simulate_without_field_needs_dt() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut s = scenario();
    s["field"] =
        json!({ "alpha_x": 0.0, "alpha_y": 0.0, "beta_x": 0.0, "beta_y": 0.0, "e": 1.0, "c": 1.0, "m_p": 1.0 });
    write_json(d, "s.json", &s);
    let out = ncphase(d, &["simulate", "--scenario", "s.json", "--out", "t.csv"]);
    assert_eq!(out.status.code(), Some(2));
    let out = ncphase(d, &["simulate", "--scenario", "s.json", "--out", "t.csv", "--dt", "0.01", "--steps", "10"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn equivalence_flags_mismatched_eta() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_json(d, "s.json", &scenario());
    let ok = ncphase(d, &["equivalence", "--scenario", "s.json", "--json"]);
    assert_eq!(ok.status.code(), Some(0));
    let bad = ncphase(d, &["equivalence", "--scenario", "s.json", "--eta-scale", "1.5", "--json"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(report(&bad)["metrics"]["nc_deviation"].as_f64().unwrap() > 1e-3);
}

#[test]
fn sweep_eta_law_is_linear() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = json!({
        "kind": "match-field",
        "base": { "alpha_x": 1.0, "alpha_y": 2.0, "beta_x": 1.0, "beta_y": 2.0 },
        "axes": [{ "name": "e", "start": 0.5, "stop": 2.0, "count": 4 }]
    });
    write_json(d, "sweep.json", &cfg);
    let par = ncphase(d, &["sweep", "--config", "sweep.json", "--json"]);
    let seq = ncphase(d, &["sweep", "--config", "sweep.json", "--sequential", "--json"]);
    assert_eq!(par.status.code(), Some(0));
    assert_eq!(par.stdout, seq.stdout);
    let rows = report(&par)["result"].as_array().unwrap().clone();
    for r in &rows {
        let eta = r["metrics"]["eta"].as_f64().unwrap();
        let w = r["metrics"]["abs_omega_nc"].as_f64().unwrap();
        assert!((w - eta.abs()).abs() < 1e-12);
    }

    let big = json!({ "kind": "solve2d", "axes": [
        { "name": "theta", "start": 0.0, "stop": 1.0, "count": 1000 },
        { "name": "eta", "start": 0.0, "stop": 1.0, "count": 1000 },
        { "name": "f_theta", "start": 0.0, "stop": 1.0, "count": 2 }
    ]});
    write_json(d, "big.json", &big);
    assert_eq!(ncphase(d, &["sweep", "--config", "big.json"]).status.code(), Some(2));
}
