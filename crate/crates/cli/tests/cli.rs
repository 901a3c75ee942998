//! End-to-end tests driving the compiled binary: exit codes, report
//! determinism, and the merge pipeline.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn qsf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qsf"))
        .args(args)
        .output()
        .expect("binary must spawn")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("stdout must be utf-8")
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).expect("stderr must be utf-8")
}

/// The report with its only run-dependent line removed.
fn stable(report: &str) -> String {
    report
        .lines()
        .filter(|l| !l.contains("wall_time_ms"))
        .collect::<Vec<_>>()
        .join("\n")
}

fn write(path: &Path, content: &str) {
    fs::write(path, content).expect("fixture write");
}

#[test]
fn eval_reports_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let points = dir.path().join("points.json");
    write(&points, "[[0.4, 0.2], [1.1, -0.3], [0.9, 0.7]]");
    let args = ["eval", "theta", "--q", "0.5", "--points"];
    let first = qsf(&[&args[..], &[points.to_str().unwrap()]].concat());
    let second = qsf(&[&args[..], &[points.to_str().unwrap()]].concat());
    assert_eq!(code(&first), 0, "stderr: {}", stderr(&first));
    assert_eq!(stable(&stdout(&first)), stable(&stdout(&second)));
    assert!(stdout(&first).contains("\"schema\": \"qsf-report/1\""));
}

#[test]
fn eval_writes_the_same_report_to_file_and_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let points = dir.path().join("points.json");
    let out = dir.path().join("report.json");
    write(&points, "[[1.5, 0.0]]");
    let run = qsf(&[
        "eval",
        "q_gamma",
        "--q",
        "0.5",
        "--points",
        points.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&run), 0);
    let file = fs::read_to_string(&out).unwrap();
    assert_eq!(file, stdout(&run));
}

#[test]
fn eval_pole_points_fail_with_domain_exit() {
    let dir = tempfile::tempdir().unwrap();
    let points = dir.path().join("points.json");
    // the second point sits on a q-gamma pole: the report keeps the good
    // point, records the guard for the bad one, and the run exits 2
    write(&points, "[[1.5, 0.0], [-1.0, 0.0]]");
    let run = qsf(&[
        "eval",
        "q_gamma",
        "--q",
        "0.5",
        "--points",
        points.to_str().unwrap(),
    ]);
    assert_eq!(code(&run), 2);
    let report = stdout(&run);
    assert!(report.contains("\"pass\": false"));
    assert!(report.contains("point-0"));
    assert!(report.contains("point-1"));
    assert!(report.contains("note"));
}

#[test]
fn unknown_function_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let points = dir.path().join("points.json");
    write(&points, "[[0.5, 0.5]]");
    let run = qsf(&[
        "eval",
        "no_such_function",
        "--q",
        "0.5",
        "--points",
        points.to_str().unwrap(),
    ]);
    assert_eq!(code(&run), 64);
    assert!(stderr(&run).contains("unknown function"));
}

#[test]
fn missing_points_file_is_a_usage_error() {
    let run = qsf(&["eval", "theta", "--q", "0.5", "--points", "/nonexistent/p.json"]);
    assert_eq!(code(&run), 64);
    assert!(stderr(&run).contains("error:"));
}

#[test]
fn missing_required_flag_is_a_usage_error() {
    let run = qsf(&["eval", "theta"]);
    assert_eq!(code(&run), 64);
}

#[test]
fn series_eval_requires_parameter_file() {
    let dir = tempfile::tempdir().unwrap();
    let points = dir.path().join("points.json");
    write(&points, "[[0.2, 0.1]]");
    let bare = qsf(&[
        "eval",
        "basic_phi",
        "--q",
        "0.5",
        "--points",
        points.to_str().unwrap(),
    ]);
    assert_eq!(code(&bare), 64);
    let params = dir.path().join("params.json");
    write(&params, r#"{"upper": [[2.0, 0.0]], "lower": [[0.25, 0.0]]}"#);
    let run = qsf(&[
        "eval",
        "basic_phi",
        "--q",
        "0.5",
        "--params",
        params.to_str().unwrap(),
        "--points",
        points.to_str().unwrap(),
    ]);
    assert_eq!(code(&run), 0, "stderr: {}", stderr(&run));
}

#[test]
fn verify_suite_passes_and_respects_seed() {
    let base = qsf(&["verify", "thomae"]);
    assert_eq!(code(&base), 0, "stderr: {}", stderr(&base));
    let repeat = qsf(&["verify", "thomae"]);
    assert_eq!(stable(&stdout(&base)), stable(&stdout(&repeat)));
    let reseeded = qsf(&["verify", "thomae", "--seed", "8"]);
    assert_eq!(code(&reseeded), 0);
    assert_ne!(stable(&stdout(&base)), stable(&stdout(&reseeded)));
}

#[test]
fn unknown_suite_is_a_usage_error() {
    let run = qsf(&["verify", "no-such-suite"]);
    assert_eq!(code(&run), 64);
    assert!(stderr(&run).contains("thomae"), "should list the suites");
}

#[test]
fn merge_combines_reports_and_propagates_failure() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.json");
    let bad = dir.path().join("bad.json");
    let merged = dir.path().join("merged.json");
    assert_eq!(code(&qsf(&["verify", "thomae", "--out", good.to_str().unwrap()])), 0);
    let points = dir.path().join("points.json");
    write(&points, "[[-1.0, 0.0]]");
    let failing = qsf(&[
        "eval",
        "q_gamma",
        "--q",
        "0.5",
        "--points",
        points.to_str().unwrap(),
        "--out",
        bad.to_str().unwrap(),
    ]);
    assert_eq!(code(&failing), 2);
    let run = qsf(&[
        "merge",
        good.to_str().unwrap(),
        bad.to_str().unwrap(),
        "--out",
        merged.to_str().unwrap(),
    ]);
    assert_eq!(code(&run), 1, "merged report carries the failure");
    let text = fs::read_to_string(&merged).unwrap();
    assert!(text.contains("\"pass\": false"));
    assert!(text.contains("identity-n2"), "records from the first source");
    assert!(text.contains("point-0"), "records from the second source");
    assert!(text.contains("sources"));
}

#[test]
fn merge_refuses_alien_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let alien = dir.path().join("alien.json");
    write(&alien, r#"{"schema": "other/9", "records": []}"#);
    let run = qsf(&["merge", alien.to_str().unwrap()]);
    assert_eq!(code(&run), 64);
    assert!(stderr(&run).contains("schema"));
}

#[test]
fn merge_without_files_is_a_usage_error() {
    assert_eq!(code(&qsf(&["merge"])), 64);
}
