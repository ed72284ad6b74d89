use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn bwlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bwlab")).args(args).output().unwrap()
}

fn json(args: &[&str]) -> Value {
    let mut a = args.to_vec();
    a.push("--json");
    let out = bwlab(&a);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("bwlab-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    d
}

#[test]
fn malformed_input_exits_with_config_code() {
    for args in [
        &["spectrum", "--family", "quartic"][..],
        &["spectrum", "--tol", "1"],
        &["spectrum", "--window", "3,1"],
        &["branchpoint", "--family", "beta"],
        &["branchpoint", "--radius", "0.7"],
        &["zeros"],
        &["report", "--n-max", "9"],
    ] {
        assert_eq!(bwlab(args).status.code(), Some(3), "{args:?}");
    }
}

#[test]
fn thread_variable_is_validated() {
    let out = Command::new(env!("CARGO_BIN_EXE_bwlab"))
        .args(["stokes", "--E-critical"])
        .env("BWLAB_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn help_and_version_succeed() {
    assert!(bwlab(&["--help"]).status.success());
    assert!(bwlab(&["--version"]).status.success());
}

#[test]
fn documents_carry_the_run_configuration() {
    let doc = json(&["stokes", "--E-critical", "--seed", "7"]);
    assert_eq!(doc["meta"]["seed"], 7);
    assert_eq!(doc["meta"]["spec"]["family"], "hbar");
    assert!(doc["meta"]["command"]["stokes"]["e_critical"].as_bool().unwrap());
    assert!((doc["result"]["value"].as_f64().unwrap() - 0.352268).abs() < 5e-4);
}

#[test]
fn large_hbar_spectrum() {
    let doc = json(&["spectrum", "--hbar", "4", "--window", "0.01,30,-1,1", "--count", "2"]);
    let levels = doc["result"].as_array().unwrap();
    assert_eq!(levels.len(), 2);
    for (m, l) in levels.iter().enumerate() {
        assert_eq!(l["label"], m);
        assert!(l["im_E"].as_f64().unwrap().abs() < 1e-8);
    }
}

#[test]
fn zeros_of_third_level() {
    let doc = json(&["zeros", "--hbar", "3", "--m", "3"]);
    assert_eq!(doc["result"]["nodes"], 3);
    assert_eq!(doc["result"]["imaginary_nodes"], 1);
}

#[test]
fn branchpoint_files_are_deterministic() {
    let (a, b) = (scratch("a"), scratch("b"));
    for d in [&a, &b] {
        let out = bwlab(&["branchpoint", "--n", "0", "--monodromy", "--out", d.to_str().unwrap()]);
        assert!(out.status.success());
        let text = String::from_utf8_lossy(&out.stdout);
        assert!(text.contains("one loop (0 1)"), "{text}");
    }
    for f in ["branchpoint_n0.json", "branchpoint_n0.md", "branchpoint_n0_s.csv"] {
        let x = std::fs::read(a.join(f)).unwrap();
        assert_eq!(x, std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let csv = std::fs::read_to_string(a.join("branchpoint_n0_s.csv")).unwrap();
    assert!(csv.starts_with("# bwlab "));
    assert!(csv.lines().nth(2).unwrap().starts_with("hbar,"));
    let _ = std::fs::remove_dir_all(&a);
    let _ = std::fs::remove_dir_all(&b);
}

#[test]
fn nothing_is_written_without_out() {
    let out = bwlab(&["stokes", "--E", "0.5"]);
    assert!(out.status.success());
    assert!(!String::from_utf8_lossy(&out.stdout).contains("wrote"));
}

#[test]
fn wkb_with_exact_level() {
    let doc = json(&["wkb", "--hbar", "0.05", "--n", "1", "--exact"]);
    assert!(doc["result"]["exact"]["difference"].as_f64().unwrap() < 1e-2);
    assert!(doc["result"]["exact"]["residual"]["residual"].as_f64().unwrap() < 1e-7);
}
