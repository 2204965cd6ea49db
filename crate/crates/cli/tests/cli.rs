use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
[model]
kappa = 1.5
m = 0.5

[kernel]
family = "exponential-control"
rate = 1.0

[grid]
dim = 1
half_width = 16.0
n = 64

[run]
horizon = 5.0
snapshot_dt = 0.25
"#;

fn frontlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_frontlab")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn simulate_writes_outputs_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let mut traces = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let o = frontlab(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "4"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        assert!(out.join("fit.csv").exists());
        traces.push(fs::read(out.join("trace.csv")).unwrap());
    }
    assert_eq!(traces[0], traces[1]);
}

#[test]
fn malformed_config_exits_2_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", &SMALL.replace("n = 64", "n = sixty-four"));
    let o = frontlab(&["simulate", "--config", &cfg]);
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 13"), "{err}");

    let o = frontlab(&["simulate", "--config", dir.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let o = frontlab(&["frobnicate"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn verify_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("v");
    let ok = write_config(dir.path(), "ok.toml", &(SMALL.to_string() + "\n[verify]\nsuites = [\"reaction-conditions\", \"lambert\"]\n"));
    let o = frontlab(&["verify", "--config", &ok, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let csv = fs::read_to_string(out.join("verification.csv")).unwrap();
    assert!(csv.starts_with("suite,parameters,measured,tolerance,pass"));

    let bad = write_config(
        dir.path(),
        "over.toml",
        &(SMALL.to_string() + "\n[reaction]\nnu_scale = 2.0\n\n[verify]\nsuites = [\"reaction-conditions\"]\n"),
    );
    let o = frontlab(&["verify", "--config", &bad, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL reaction-conditions"));

    let empty = write_config(dir.path(), "empty.toml", &(SMALL.to_string() + "\n[verify]\nsuites = []\n"));
    let o = frontlab(&["verify", "--config", &empty, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn sweep_marks_failed_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s");
    let text = SMALL.to_string()
        + "\n[[sweep.families]]\nfamily = \"exponential-control\"\nrate = 1.0\n\n[[sweep.families]]\nfamily = \"polynomial\"\nm = 1.0\nmu = 0.0\nd = 1\n";
    let cfg = write_config(dir.path(), "sweep.toml", &text);
    let o = frontlab(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap(), "--jobs", "2"]);
    assert_eq!(code(&o), 1);
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("exponential-control,linear,"));
    assert!(lines[2].contains("failed"));
}

#[test]
fn predict_prints_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let o = frontlab(&["predict", "--config", &cfg]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    assert_eq!(text.lines().next(), Some("t,family,predicted_eta,lower_bound"));
    assert_eq!(text.lines().count(), 21);
}
