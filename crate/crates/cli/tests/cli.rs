use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn rspread(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rspread")).args(args).output().unwrap()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn outputs(m: &Value) -> Vec<String> {
    m["outputs"].as_array().unwrap().iter().map(|o| o["file"].as_str().unwrap().to_string()).collect()
}

fn ok(out: &Output) {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn record_then_replay_from_the_saved_reference() {
    let tmp = tempfile::tempdir().unwrap();
    let rec_dir = tmp.path().join("rec");
    let out = rspread(&["demo", "record", "--out", rec_dir.to_str().unwrap()]);
    ok(&out);
    let m = manifest(&rec_dir);
    assert_eq!(m["command"], "demo record");
    assert_eq!(outputs(&m), ["recording.rec", "reference.ref", "trace.csv"]);
    let t_r = m["results"]["t_r"].as_f64().unwrap();
    assert!(t_r > 0.0);
    let printed: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(printed, m["results"]);

    let replay_dir = tmp.path().join("replay");
    let reference = rec_dir.join("reference.ref");
    let args = [
        "demo",
        "replay",
        "--reference",
        reference.to_str().unwrap(),
        "--variant",
        "no-interim",
        "--displacement",
        "-0.015",
        "--out",
        replay_dir.to_str().unwrap(),
    ];
    ok(&rspread(&args));
    let m = manifest(&replay_dir);
    assert_eq!(outputs(&m), ["trace.csv"]);
    assert_eq!(m["results"]["variant"], "no-interim");
    assert_eq!(m["results"]["displacement"], -0.015);
    assert_eq!(m["results"]["t_r"], t_r);
    assert!(m["results"]["t_imp"].is_f64());
    let trace = std::fs::read_to_string(replay_dir.join("trace.csv")).unwrap();
    assert!(trace.starts_with("t,mode,gamma,tau_norm,normal_force_0,"));
}

#[test]
fn small_sweep_from_the_command_line_and_config() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("c.toml");
    std::fs::write(&config, "[sweep]\nruns = 3\nseed = 7\nvariants = [\"proposed\"]\n").unwrap();
    let dir = tmp.path().join("sweep");
    let args = [
        "--config",
        config.to_str().unwrap(),
        "experiment",
        "sweep",
        "--runs",
        "1",
        "--variants",
        "proposed,no-rs",
        "--displacements",
        "-0.03,0.03",
        "--out",
        dir.to_str().unwrap(),
    ];
    ok(&rspread(&args));
    let m = manifest(&dir);
    let files = outputs(&m);
    for f in ["runs.csv", "summary.csv", "trace.csv", "tau_norm_bars.svg", "tau_norm_trace.svg", "reference.ref"] {
        assert!(files.iter().any(|x| x == f), "{f} missing from {files:?}");
    }
    assert_eq!(m["results"]["sweep"]["runs"], 1);
    assert_eq!(m["results"]["sweep"]["seed"], 7);
    assert_eq!(m["results"]["cells"].as_array().unwrap().len(), 4);
    let runs = std::fs::read_to_string(dir.join("runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 5);
}

#[test]
fn default_run_directories_live_under_runs_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = rspread(&["--runs-dir", tmp.path().to_str().unwrap(), "experiment", "sweep", "--runs", "0"]);
    assert!(!bad.status.success());
    let made: Vec<_> = std::fs::read_dir(tmp.path()).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    assert_eq!(made.len(), 1);
    assert!(made[0].starts_with("experiment-sweep-"), "{made:?}");
}

#[test]
fn bad_inputs_fail_with_a_message() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().to_str().unwrap();
    let out = rspread(&["--runs-dir", root, "demo", "replay", "--variant", "fastest"]);
    assert!(!out.status.success());
    let config = tmp.path().join("c.toml");
    std::fs::write(&config, "[nonsense]\n").unwrap();
    let out = rspread(&["--runs-dir", root, "--config", config.to_str().unwrap(), "demo", "record"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("c.toml"));
}

#[test]
fn serve_reports_a_busy_port() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = listener.local_addr().unwrap().port().to_string();
    let tmp = tempfile::tempdir().unwrap();
    let out = rspread(&["--runs-dir", tmp.path().to_str().unwrap(), "serve", "--port", &port]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("already in use"));
}
