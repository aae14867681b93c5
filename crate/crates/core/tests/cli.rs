mod common;

use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn lions(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lions")).args(args).output().expect("run lions")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("lions-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn json_of(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

#[test]
fn enumerate_is_deterministic_and_complete() {
    let args = ["enumerate", "--gamma", "2", "--d", "1"];
    let a = lions(&args);
    let b = lions(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let v = json_of(&a);
    let expected: usize = (0..=2).map(|n| common::brute_force_classes(n, 1).len()).sum();
    assert_eq!(v["count"].as_u64().unwrap() as usize, expected);
    let forests = v["forests"].as_array().unwrap();
    let size = |f: &Value| f["forest"]["parent"].as_array().unwrap().len();
    let roots = |f: &Value| f["forest"]["parent"].as_array().unwrap().iter().filter(|p| p.is_null()).count();
    assert_eq!(forests.iter().filter(|f| size(f) == 1).count(), 2);
    assert_eq!(forests.iter().filter(|f| size(f) == 2 && roots(f) == 1).count(), 4);
    for f in forests {
        let g = f["grading"].as_array().unwrap();
        assert_eq!(f["weight"].as_f64().unwrap(), (g[0].as_u64().unwrap() + g[1].as_u64().unwrap()) as f64);
    }
}

#[test]
fn hopf_verify_passes_and_catches_a_corrupted_table() {
    let ok = lions(&["hopf-verify", "--gamma", "3", "--d", "1", "--samples", "1"]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    assert_eq!(json_of(&ok)["passed"], true);
    let bad = lions(&["hopf-verify", "--gamma", "3", "--d", "1", "--samples", "1", "--corrupt"]);
    assert_eq!(bad.status.code(), Some(1));
    let err = String::from_utf8_lossy(&bad.stderr);
    assert!(err.contains("FAIL coassociativity (class table)"), "{err}");
    let rep = json_of(&bad);
    let failed: Vec<&str> =
        rep["identities"].as_array().unwrap().iter().filter(|i| i["passed"] == false).map(|i| i["name"].as_str().unwrap()).collect();
    assert!(failed.contains(&"coassociativity (class table)"));
}

#[test]
fn lift_of_a_linear_csv_path() {
    let p = scratch("line.csv");
    std::fs::write(&p, "t,x1,x2\n0,0,0\n1,2,-1\n").unwrap();
    let out_path = scratch("lift.json");
    let out = lions(&["lift", "--gamma", "1", "--d", "2", "--paths", p.to_str().unwrap(), "--s", "0.5", "--t", "1", "--out", out_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    let lifts = v["lifts"].as_array().unwrap();
    assert!(lifts.len() >= 4);
    for l in lifts.iter().filter(|l| l["forest"]["parent"].as_array().unwrap().len() == 1) {
        let label = l["forest"]["label"][0].as_u64().unwrap() as usize;
        let data = l["value"]["data"].as_array().unwrap();
        let expect = [1.0, -0.5][label - 1];
        assert!((data[label - 1].as_f64().unwrap() - expect).abs() < 1e-15, "{l}");
    }
}

#[test]
fn rho_of_identical_inputs_is_zero() {
    let spec = r#"{"mode":"rho",
        "f":{"zero":{"times":[0,1],"values":[[0],[1]]},"atoms":[{"times":[0,1],"values":[[0],[2]]},{"times":[0,0.5,1],"values":[[0],[1],[-1]]}]},
        "g":{"zero":{"times":[0,1],"values":[[0],[1]]},"atoms":[{"times":[0,1],"values":[[0],[2]]},{"times":[0,0.5,1],"values":[[0],[1],[-1]]}]},
        "forests":null}"#;
    let p = scratch("rho.json");
    std::fs::write(&p, spec).unwrap();
    let out = lions(&["metric", "--spec", p.to_str().unwrap(), "--gamma", "2", "--d", "1", "--grid-level", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json_of(&out);
    assert_eq!(v["value"], 0.0);
    assert_eq!(v["upper_bound"], true);
}

#[test]
fn norm_report_has_every_field() {
    let spec = r#"{"mode":"norm","sampler":{"kind":"random_walk","segments":4,"dim":1,"scale":1.0},"s":0.0,"t":1.0}"#;
    let p = scratch("norm.json");
    std::fs::write(&p, spec).unwrap();
    let out = lions(&["metric", "--spec", p.to_str().unwrap(), "--gamma", "2", "--d", "1", "--samples", "20"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json_of(&out);
    for k in ["value", "stderr", "seed", "triple_norm", "equivalence", "dual_conditions", "parameters"] {
        assert!(!v[k].is_null(), "{k}");
    }
    assert!(v["value"].as_f64().unwrap() > 0.0);
}

#[test]
fn lln_writes_csv_and_reports() {
    let spec = r#"{"sampler":{"kind":"finite","atoms":[{"times":[0,1],"values":[[0],[1]]},{"times":[0,1],"values":[[0],[-1]]}]},
        "n_grid":[2,4],"replications":4,"atoms":4,"grid_level":1}"#;
    let p = scratch("lln.json");
    std::fs::write(&p, spec).unwrap();
    let csv = scratch("lln.csv");
    let out = lions(&["lln", "--spec", p.to_str().unwrap(), "--gamma", "2", "--d", "1", "--csv", csv.to_str().unwrap()]);
    assert!(matches!(out.status.code(), Some(0) | Some(1)));
    let v = json_of(&out);
    assert_eq!(v["table"]["rows"].as_array().unwrap().len(), 2);
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 3);
}

#[test]
fn input_errors_exit_two() {
    assert_eq!(lions(&["metric", "--spec", "/nonexistent/spec.json"]).status.code(), Some(2));
    assert_eq!(lions(&["enumerate", "--gamma", "-1"]).status.code(), Some(2));
    let p = scratch("broken.csv");
    std::fs::write(&p, "t,x\n0,0\n0.5,oops\n1,1\n").unwrap();
    let out = lions(&["lift", "--paths", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
    assert_eq!(lions(&["--help"]).status.code(), Some(0));
}
