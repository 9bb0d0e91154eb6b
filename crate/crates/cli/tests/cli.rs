use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn recovery(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_recovery")).args(args).current_dir(cwd).output().unwrap()
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn status_of(metrics: &Path) -> Value {
    let m: Value = serde_json::from_slice(&std::fs::read(metrics).unwrap()).unwrap();
    m["status"].clone()
}

#[test]
fn train_fit_run_batch_serve() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let plan = json!({
        "controllers": ["c0", "c1", "c2", "c3", "c4", "c5"],
        "failures": ["f0", "f1", "f2", "f3", "f4", "f5"],
        "scenarios": ["training-circle-slow"],
        "seeds": [1],
        "steps": 80,
        "residual_window": 10
    });
    std::fs::write(dir.join("plan.json"), plan.to_string()).unwrap();
    ok(&recovery(&["train", "--plan", "plan.json", "--out", "data"], dir));
    assert!(dir.join("data/manifest.json").exists());
    ok(&recovery(&["fit", "--data", "data", "--ns", "5", "--out", "art"], dir));

    // a short corridor as a scenario file
    let mut scenario: Value =
        serde_json::to_value(recovery_core::scenario::Scenario::shipped("corridor").unwrap()).unwrap();
    scenario["duration"] = json!(6.0);
    scenario["name"] = json!("short");
    std::fs::write(dir.join("short.json"), scenario.to_string()).unwrap();
    let out = recovery(&["run", "--scenario", "short.json", "--artifacts", "art", "--seed", "3", "--log-dir", "logs"], dir);
    let run_dir = dir.join("logs/short-full-3");
    for f in ["run.json", "decisions.csv", "metrics.json", "trajectory.csv", "timeline.csv", "confidence.csv"] {
        assert!(run_dir.join(f).exists(), "{f}");
    }
    // too short to reach the goal: exit 1, not an error
    assert_eq!(status_of(&run_dir.join("metrics.json")), "timeout");
    assert_eq!(out.status.code(), Some(1));

    let batch = json!({
        "artifacts": "art",
        "runs": [
            { "scenario": scenario, "mode": "nominal" },
            { "scenario": scenario, "mode": "no-recovery" }
        ]
    });
    std::fs::write(dir.join("batch.json"), batch.to_string()).unwrap();
    let out = recovery(&["batch", "--plan", "batch.json", "--seeds", "2", "--seed", "5", "--log-dir", "b"], dir);
    assert_eq!(out.status.code(), Some(1));
    let rows: Vec<Value> = serde_json::from_slice(&std::fs::read(dir.join("b/batch.json")).unwrap()).unwrap();
    let seeds: Vec<u64> = rows.iter().map(|r| r["seed"].as_u64().unwrap()).collect();
    assert_eq!(seeds, vec![5, 6, 5, 6]);
    assert!(dir.join("b/short-no-recovery-6/run.json").exists());
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.lines().any(|l| l.starts_with("short\tnominal\t2\t")), "{table}");

    // served, unpaced, started without a console; exits once finished
    let out = recovery(
        &["run", "--scenario", "short.json", "--artifacts", "art", "--serve", "0", "--fast", "--autostart", "--log-dir", "served"],
        dir,
    );
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("serving on http://127.0.0.1:"));
    let served = std::fs::read_dir(dir.join("served")).unwrap().next().unwrap().unwrap().path();
    assert_eq!(status_of(&served.join("metrics.json")), "timeout");
}

#[test]
fn errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = recovery(&["run", "--scenario", "corridor", "--artifacts", "missing"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("loading artifacts"));
    std::fs::write(tmp.path().join("bad.json"), "{\"seeds\": []}").unwrap();
    assert_eq!(recovery(&["train", "--plan", "bad.json", "--out", "x"], tmp.path()).status.code(), Some(2));
    assert_eq!(recovery(&["run", "--scenario", "corridor", "--artifacts", "a", "--mode", "sideways"], tmp.path()).status.code(), Some(2));
}
