use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn rasa(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rasa")).args(args).current_dir(dir).output().unwrap()
}

fn write_config(dir: &Path, value: &Value) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr_error(o: &Output) -> Value {
    let text = String::from_utf8_lossy(&o.stderr);
    let line = text.lines().rev().find(|l| l.starts_with('{')).expect("json error line");
    serde_json::from_str::<Value>(line).unwrap()["error"].clone()
}

#[test]
fn validate_passes_on_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let o = rasa(&["validate", "--out", "v"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let out = stdout(&o);
    for n in 1..=3 {
        assert!(out.contains(&format!("PASS assumption {n}")), "{out}");
    }
    let report: Value = serde_json::from_slice(&std::fs::read(tmp.path().join("v/validation.json")).unwrap()).unwrap();
    assert_eq!(report["pass"], json!(true));
    assert!(tmp.path().join("v/manifest.json").exists());
}

#[test]
fn disconnected_pool_fails_assumption_three() {
    let tmp = tempfile::tempdir().unwrap();
    let zero = vec![vec![0.0; 10]; 10];
    let cfg = write_config(tmp.path(), &json!({"graph": {"n": 10, "kind": "fixed_pool", "graphs": [zero]}}));
    let o = rasa(&["validate", "--config", &cfg], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL assumption 3"), "{}", stdout(&o));
    let o = rasa(&["run", "--config", &cfg, "--iters", "10"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    let err = stderr_error(&o);
    assert_eq!(err["kind"], json!("assumption-violated"));
    assert!(err["message"].as_str().unwrap().contains("assumption 3"));
}

#[test]
fn indefinite_objective_fails_assumption_one() {
    let tmp = tempfile::tempdir().unwrap();
    let agent = |q: f64| json!({"Q": [[q]], "c": [0.0], "set": {"kind": "box", "lo": [-1.0], "hi": [1.0]}, "d": [0.5]});
    let cfg = write_config(
        tmp.path(),
        &json!({
            "problem": {"n": 2, "m": 1, "agents": [agent(1.0), agent(-1.0)]},
            "graph": {"n": 2, "kind": "fixed_pool", "graphs": [[[0.0, 1.0], [1.0, 0.0]]]}
        }),
    );
    let o = rasa(&["validate", "--config", &cfg], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    let msg = format!("{}{}", stdout(&o), String::from_utf8_lossy(&o.stderr));
    assert!(msg.contains("assumption 1"), "{msg}");
}

#[test]
fn malformed_configs_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &json!({"run": {"sed": 3}}));
    let o = rasa(&["run", "--config", &cfg], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr_error(&o)["message"].as_str().unwrap().contains("sed"));
    let o = rasa(&["run", "--set", "run.paths=\"many\""], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let o = rasa(&["frobnicate"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn runs_are_reproducible_and_reports_regenerate() {
    let tmp = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let o = rasa(&["run", "--seed", "7", "--iters", "500", "--out", out], tmp.path());
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["trace.csv", "allocations.csv", "final_state.json", "summary.json"] {
        let a = std::fs::read(tmp.path().join("a").join(f)).unwrap();
        let b = std::fs::read(tmp.path().join("b").join(f)).unwrap();
        assert!(a == b, "{f} differs");
    }
    let summary = tmp.path().join("a/summary.json");
    let before = std::fs::read(&summary).unwrap();
    std::fs::remove_file(&summary).unwrap();
    let o = rasa(&["report", "a"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read(&summary).unwrap(), before);
}

#[test]
fn solve_writes_a_certified_solution() {
    let tmp = tempfile::tempdir().unwrap();
    let o = rasa(&["solve", "--out", "s"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let kkt: Value = serde_json::from_slice(&std::fs::read(tmp.path().join("s/kkt.json")).unwrap()).unwrap();
    assert_eq!(kkt["pass"], json!(true));
    let oracle: Value = serde_json::from_slice(&std::fs::read(tmp.path().join("s/oracle.json")).unwrap()).unwrap();
    assert_eq!(oracle["X"].as_array().unwrap().len(), 10);
}
