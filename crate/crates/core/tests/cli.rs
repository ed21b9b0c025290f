mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::fixture_path;
use serde_json::Value;

fn shadowlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shadowlab")).args(args).env("SHADOWLAB_WORKERS", "2").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn spiral_cert_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    for out in [&a, &b] {
        let o = shadowlab(&[
            "spiral-cert", "--kind", "spiral2d", "--a", "1", "--b", "1", "--eps", "0.785398", "--L", "2",
            "--trials", "2000", "--seed", "42", "--out", out.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let v = json(&a);
    assert_eq!(v["tool"], "shadowlab");
    assert_eq!(v["command"], "spiral-cert");
    assert_eq!(v["seed"], 42);
    assert_eq!(v["config"]["trials"], 2000);
    assert!(v["version"].is_string());
    assert!(v["result"]["T"].as_f64().unwrap() > 0.0);
}

#[test]
fn spiral_cert_exit_codes() {
    assert_eq!(code(&shadowlab(&["spiral-cert", "--kind", "spiral2d", "--a", "-1", "--eps", "0.5", "--L", "1"])), 1);
    let o = shadowlab(&[
        "spiral-cert", "--kind", "spiral2d", "--a", "1", "--eps", "0.785398", "--L", "2", "--trials", "2000", "--T",
        "0.1", "--d0", "0.1",
    ]);
    assert_eq!(code(&o), 2);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["result"]["pass"], false);
    assert_eq!(code(&shadowlab(&["spiral-cert", "--kind", "nonsense"])), 1);
    assert_eq!(code(&shadowlab(&["--help"])), 0);
}

#[test]
fn transversality_report() {
    let o = shadowlab(&["transversality", "--system", &fixture_path("ntrans3d")]);
    assert_eq!(code(&o), 0);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["result"]["transversality"]["verdict"], "nontransversal");
    assert_eq!(v["result"]["transversality"]["defect_dim"], 1);
    let o = shadowlab(&["transversality", "--system", "/nonexistent.json"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn defect_of_an_exact_orbit() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("g.csv");
    let o = shadowlab(&[
        "defect", "--field", &fixture_path("sink_field"), "--x0", "1,0.5,-0.5", "--window", "0,4", "--dt", "0.5",
        "--csv", csv.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["result"]["defect"]["defect"].as_f64().unwrap() <= 1e-8);
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 10);
}

#[test]
fn shadow_search_on_a_zero_field_jump() {
    let dir = tempfile::tempdir().unwrap();
    let field = dir.path().join("zero.json");
    std::fs::write(&field, r#"{"blocks": [{"type": "real", "rate": 0.0}, {"type": "real", "rate": 0.0}]}"#).unwrap();
    let pseudo = dir.path().join("jump.json");
    std::fs::write(&pseudo, r#"{"t0": -1.0, "dt": 0.5, "nodes": [[0,0],[0,0],[0.2,0],[0.2,0],[0.2,0]]}"#).unwrap();
    let out = dir.path().join("r.json");
    let o = shadowlab(&[
        "shadow-search", "--field", field.to_str().unwrap(), "--pseudo", pseudo.to_str().unwrap(), "--class-a", "0",
        "--budget", "2000", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let best = json(&out)["result"]["best_eps"].as_f64().unwrap();
    assert!((best - 0.1).abs() <= 1e-6, "{best}");
    let o = shadowlab(&[
        "shadow-search", "--field", field.to_str().unwrap(), "--pseudo", pseudo.to_str().unwrap(), "--target", "0.01",
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn nosubset_exit_codes() {
    let sys = fixture_path("sconn2d");
    let start = std::time::Instant::now();
    let o = shadowlab(&["nosubset", "--system", &sys, "--tau0", "2", "--tau1", "2", "--xgrid", "20", "--hsamples", "20"]);
    assert!(start.elapsed().as_secs_f64() < 10.0);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["result"]["feasible"], false);
    let o = shadowlab(&["nosubset", "--system", &sys, "--eps", "10"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("jump target"));
}

#[test]
fn counterexample_small_run() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("sweep.csv");
    let o = shadowlab(&[
        "counterexample", "--system", &fixture_path("ntrans3d"), "--L", "2", "--d", "1e-2", "--starts", "2",
        "--budget", "400", "--csv", csv.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("L,d,best_eps,ratio,class_a,verdict,obstruction_verdict\n"));
    assert!(text.contains("LipFail,BackViolated") || text.contains("LipFail,FwdViolated"));
}

#[test]
fn counterexample_rejects_degenerate_fixtures() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    let text = std::fs::read_to_string(fixture_path("ntrans3d")).unwrap().replace("\"b\": 2.0", "\"b\": 0.0");
    std::fs::write(&bad, text).unwrap();
    assert_eq!(code(&shadowlab(&["counterexample", "--system", bad.to_str().unwrap()])), 1);
}
