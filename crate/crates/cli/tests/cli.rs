use std::fs;
use std::process::{Command, Output};

fn popproto(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_popproto")).args(args).output().expect("binary runs")
}

#[test]
fn sweep_output_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let paths: Vec<String> = ["a.csv", "b.csv"].iter().map(|f| dir.path().join(f).display().to_string()).collect();
    for path in &paths {
        let out = popproto(&[
            "sweep",
            "--protocol",
            "fourstate",
            "--n",
            "9,17",
            "--trials",
            "6",
            "--seed",
            "4",
            "--out",
            path,
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = fs::read_to_string(&paths[0]).unwrap();
    assert_eq!(a, fs::read_to_string(&paths[1]).unwrap());
    assert_eq!(a.lines().count(), 4);
    assert!(a.lines().nth(1).unwrap().starts_with("protocol,n,trials"));
}

#[test]
fn sweep_from_spec_file_with_trial_log() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    let out = dir.path().join("rows.json");
    fs::write(
        &spec,
        format!(
            r#"{{"protocol":"pushpull","n_values":[16,32],"trials":3,"seed_base":2,"output":{{"path":{:?},"format":"json"}}}}"#,
            out.display().to_string()
        ),
    )
    .unwrap();
    let trials = dir.path().join("trials.jsonl");
    let res = popproto(&["sweep", spec.to_str().unwrap(), "--trials-out", trials.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(doc["rows"].as_array().unwrap().len(), 2);
    assert_eq!(fs::read_to_string(&trials).unwrap().lines().count(), 6);
}

#[test]
fn explore_fourstate_all_splits() {
    let out = popproto(&["explore", "--protocol", "fourstate", "--n", "4"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["report"]["doomed"], 0);
    }
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn estimate_prints_an_interval() {
    let out = popproto(&["estimate", "--event", "always", "--protocol", "pushpull", "--n", "8", "--trials", "5"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["estimate"], 1.0);
}

#[test]
fn bad_input_exits_with_two() {
    assert_eq!(popproto(&["sweep", "--protocol", "raft", "--n", "8"]).status.code(), Some(2));
    assert_eq!(popproto(&["estimate", "--event", "sunrise"]).status.code(), Some(2));
    assert_eq!(popproto(&["sweep", "--protocol", "fourstate", "--n", "1"]).status.code(), Some(2));
}

#[test]
fn selftest_passes() {
    let out = popproto(&["selftest"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(!String::from_utf8(out.stdout).unwrap().contains("FAIL"));
}
