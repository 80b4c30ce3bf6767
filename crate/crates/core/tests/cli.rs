//! End-to-end checks of the `sim` binary: exit codes, artifact layout,
//! stdout contract, and run-to-run determinism.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sim() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sim"))
}

fn run(args: &[&str]) -> Output {
    sim().args(args).output().expect("spawn sim")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// The `summary: {...}` line parsed back as JSON.
fn summary_line(out: &Output) -> serde_json::Value {
    let text = stdout(out);
    let line = text
        .lines()
        .find_map(|l| l.strip_prefix("summary: "))
        .unwrap_or_else(|| panic!("no summary line in stdout:\n{text}"));
    serde_json::from_str(line).expect("summary line is JSON")
}

/// Log lines with the wall-clock record (the one permitted
/// nondeterministic line) removed.
fn deterministic_log_lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .expect("read log")
        .lines()
        .filter(|l| {
            let v: serde_json::Value = serde_json::from_str(l).expect("log line is JSON");
            v["record"] != "wall_clock"
        })
        .map(str::to_owned)
        .collect()
}

#[test]
fn bb84_subcommand_writes_artifacts_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    let base = ["bb84", "--n", "400", "--seed", "9", "--trials", "3", "--out"];
    let run_a = run(&[&base[..], &[out_a.to_str().unwrap()]].concat());
    assert!(run_a.status.success(), "stderr: {}", stderr(&run_a));

    let text = stdout(&run_a);
    assert!(text.contains("scenario bb84 (seed 9, 3 trials)"), "stdout: {text}");
    let summary = summary_line(&run_a);
    assert_eq!(summary["trials"], serde_json::json!(3));
    assert!(summary["mean_sift_fraction"].as_f64().unwrap() > 0.4);

    let log = out_a.join("bb84.jsonl");
    let csv = out_a.join("bb84.csv");
    let header: serde_json::Value =
        serde_json::from_str(fs::read_to_string(&log).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!(header["record"], "header");
    assert_eq!(header["seed"], serde_json::json!(9));
    assert_eq!(header["config"]["scenario"]["params"]["n_qubits"], serde_json::json!(400));
    assert_eq!(header["config_hash"].as_str().unwrap().len(), 64);

    let run_b = run(&[&base[..], &[out_b.to_str().unwrap()]].concat());
    assert!(run_b.status.success());
    assert_eq!(
        deterministic_log_lines(&log),
        deterministic_log_lines(&out_b.join("bb84.jsonl")),
        "reruns must match outside the wall-clock line"
    );
    assert_eq!(
        fs::read(&csv).unwrap(),
        fs::read(out_b.join("bb84.csv")).unwrap(),
        "rerun CSV must be byte-identical"
    );
}

#[test]
fn perturb_subcommand_prints_the_sweep_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["perturb", "--seed", "3", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    let table_start = text
        .find("lambda,max_error,max_norm_defect")
        .expect("sweep table header on stdout");
    // Header plus one row per sweep level (λ, λ/2, λ/4).
    let rows: Vec<&str> = text[table_start..].lines().take_while(|l| !l.is_empty()).collect();
    assert_eq!(rows.len(), 4, "table: {rows:?}");
    assert!(rows[1].starts_with("0.04,"), "first sweep row: {}", rows[1]);
}

#[test]
fn scenario_file_overrides_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("loop.json");
    fs::write(
        &scenario,
        r#"{"name": "demo", "seed": 41,
            "scenario": {"kind": "loop", "params": {"t_final": 2.0}}}"#,
    )
    .unwrap();
    let out = run(&[
        "loop",
        "--scenario",
        scenario.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("seed 41"), "file seed wins: {}", stdout(&out));
    let summary = summary_line(&out);
    assert_eq!(summary["dc_gain"], serde_json::json!(1.0));
    let csv = fs::read_to_string(dir.path().join("loop.csv")).unwrap();
    let last = csv.lines().last().unwrap();
    assert!(last.starts_with("2,") || last.starts_with("2.0,"), "horizon honored: {last}");
}

#[test]
fn unknown_scenario_keys_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("bad.json");
    fs::write(
        &scenario,
        r#"{"scenario": {"kind": "bb84", "params": {"n_qubitz": 10}}}"#,
    )
    .unwrap();
    let out = run(&["bb84", "--scenario", scenario.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("n_qubitz"), "names the bad key: {}", stderr(&out));
}

#[test]
fn subcommand_and_file_kind_must_agree() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("loop.json");
    fs::write(&scenario, r#"{"scenario": {"kind": "loop", "params": {}}}"#).unwrap();
    let out = run(&["bb84", "--scenario", scenario.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("loop") && err.contains("bb84"), "stderr: {err}");
}

#[test]
fn runtime_failures_exit_three_and_leave_an_error_record() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("degenerate.json");
    fs::write(
        &scenario,
        r#"{"scenario": {"kind": "perturb", "params": {"energies": [1.0, 1.0]}}}"#,
    )
    .unwrap();
    let out = run(&[
        "perturb",
        "--scenario",
        scenario.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "stderr: {}", stderr(&out));
    let log = fs::read_to_string(dir.path().join("perturb.jsonl")).unwrap();
    let last: serde_json::Value = serde_json::from_str(log.lines().last().unwrap()).unwrap();
    assert_eq!(last["record"], "error");
    assert!(last["message"].as_str().unwrap().contains("degenerate"));
}

#[test]
fn missing_scenario_file_exits_four() {
    let out = run(&["bb84", "--scenario", "/nonexistent/scenario.json"]);
    assert_eq!(out.status.code(), Some(4), "stderr: {}", stderr(&out));
}
