use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use scatter_core::eval::{ExperimentTable, Method, RoundRecord};
use scatter_core::model::{ScatterResult, ScopeKind};
use tempfile::TempDir;

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
        .to_str()
        .unwrap()
        .to_string()
}

fn scatter(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scatter"))
        .args(args)
        .current_dir(dir)
        .env_remove("RUST_LOG")
        .output()
        .unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn run_dir(dir: &TempDir, id: &str) -> PathBuf {
    dir.path().join("runs").join(id)
}

#[test]
fn run_with_mock_writes_result() {
    let dir = TempDir::new().unwrap();
    let process = fixture("lifecycle.json");
    let innovation = fixture("embedded.json");
    let out = scatter(
        dir.path(),
        &[
            "run",
            "--process",
            &process,
            "--innovation",
            &innovation,
            "--backend",
            "mock",
            "--run-id",
            "r",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("verdict: LOCAL (deployment)"));

    let run = run_dir(&dir, "r");
    let result: ScatterResult =
        serde_json::from_str(&fs::read_to_string(run.join("result.json")).unwrap()).unwrap();
    assert_eq!(result.verdict.kind, ScopeKind::Local("deployment".into()));
    assert_eq!(result.applications.len(), 4);
    for name in ["manifest.json", "cassette.json"] {
        assert!(run.join(name).is_file(), "{name}");
    }
    assert!(!run.join(".lock").exists());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["backend"], "mock");
    assert_eq!(manifest["template_digest"].as_str().unwrap().len(), 64);
}

#[test]
fn missing_process_is_a_validation_error() {
    let dir = TempDir::new().unwrap();
    let out = scatter(dir.path(), &["run", "--process", "nope.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("process spec not found"));
    assert!(!dir.path().join("runs").exists());
}

#[test]
fn invalid_process_is_a_validation_error() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, r#"{"name":"p","mode":"sideways","segments":[]}"#).unwrap();
    let out = scatter(dir.path(), &["run", "--process", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("invalid process spec"));
}

#[test]
fn missing_cassette_is_a_backend_error() {
    let dir = TempDir::new().unwrap();
    let out = scatter(
        dir.path(),
        &["run", "--backend", "replay", "--cassette", "missing.json"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("cassette miss"));
}

#[test]
fn unreachable_http_backend_is_a_backend_error() {
    let dir = TempDir::new().unwrap();
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    drop(listener);
    let out = scatter(
        dir.path(),
        &["run", "--backend", "http", "--base-url", &base],
    );
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn zero_rounds_is_rejected() {
    let dir = TempDir::new().unwrap();
    let out = scatter(dir.path(), &["eval", "--rounds", "0"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("rounds must be ≥ 1"));
}

#[test]
fn two_mock_rounds_persist_two_rows_per_method() {
    let dir = TempDir::new().unwrap();
    let out = scatter(
        dir.path(),
        &[
            "eval",
            "--rounds",
            "2",
            "--backend",
            "mock",
            "--run-id",
            "e",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let run = run_dir(&dir, "e");
    let records: Vec<RoundRecord> = fs::read_to_string(run.join("rounds.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(records.iter().filter(|r| r.method == Method::A).count(), 2);
    assert_eq!(records.iter().filter(|r| r.method == Method::B).count(), 2);
    let table =
        ExperimentTable::from_json(&fs::read_to_string(run.join("table.json")).unwrap()).unwrap();
    assert_eq!(table.rows.len(), 2);
    assert_eq!(
        table.to_jsonl(),
        fs::read_to_string(run.join("rounds.jsonl")).unwrap()
    );
}

#[test]
fn run_ids_are_not_reused() {
    let dir = TempDir::new().unwrap();
    assert_eq!(
        scatter(dir.path(), &["run", "--run-id", "x"]).status.code(),
        Some(0)
    );
    let out = scatter(dir.path(), &["run", "--run-id", "x"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("already exists"));
}

#[test]
fn locked_run_directory_is_refused() {
    let dir = TempDir::new().unwrap();
    assert_eq!(
        scatter(dir.path(), &["eval", "--rounds", "2", "--run-id", "e"])
            .status
            .code(),
        Some(0)
    );
    let run = run_dir(&dir, "e");
    fs::write(run.join(".lock"), "1").unwrap();
    let out = scatter(dir.path(), &["stats", "--run", run.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("locked"));
}

#[test]
fn stats_over_replayed_table() {
    let dir = TempDir::new().unwrap();
    let cassette = fixture("table1.json");
    let out = scatter(
        dir.path(),
        &[
            "eval",
            "--rounds",
            "20",
            "--backend",
            "replay",
            "--cassette",
            &cassette,
            "--run-id",
            "t",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let run = run_dir(&dir, "t");
    let run_arg = run.to_str().unwrap();

    assert_eq!(
        scatter(dir.path(), &["stats", "--run", run_arg])
            .status
            .code(),
        Some(0)
    );
    let csv = fs::read_to_string(run.join("stats.csv")).unwrap();
    let stages: Vec<&str> = csv
        .lines()
        .find(|l| l.starts_with("stages,"))
        .unwrap()
        .split(',')
        .collect();
    assert!((stages[3].parse::<f64>().unwrap() - 9.87).abs() < 1e-2);
    assert_eq!(stages[4], "19");
    let first = fs::read(run.join("stats.md")).unwrap();

    // a second pass leaves byte-identical reports
    assert_eq!(
        scatter(dir.path(), &["stats", "--run", run_arg])
            .status
            .code(),
        Some(0)
    );
    assert_eq!(fs::read(run.join("stats.md")).unwrap(), first);

    assert_eq!(
        scatter(dir.path(), &["report", "--run", run_arg])
            .status
            .code(),
        Some(0)
    );
    let md = fs::read_to_string(run.join("report.md")).unwrap();
    assert_eq!(
        md.lines()
            .filter(|l| l.starts_with("| ") && !l.starts_with("| Round"))
            .count(),
        21
    );
    assert!(md.contains("| Avg | 6.00 | 1.85 | 6.30 | 4.10 |"));
    let report_csv = fs::read_to_string(run.join("report.csv")).unwrap();
    assert_eq!(report_csv.lines().count(), 21);
    assert!(report_csv.lines().all(|l| l.split(',').count() == 5));
}

#[test]
fn stats_needs_two_rounds() {
    let dir = TempDir::new().unwrap();
    assert_eq!(
        scatter(dir.path(), &["eval", "--rounds", "1", "--run-id", "one"])
            .status
            .code(),
        Some(0)
    );
    let run = run_dir(&dir, "one");
    let out = scatter(dir.path(), &["stats", "--run", run.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("at least 2 rounds"));
}

#[test]
fn reports_need_a_table() {
    let dir = TempDir::new().unwrap();
    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    for cmd in ["stats", "report"] {
        let out = scatter(dir.path(), &[cmd, "--run", empty.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(1), "{cmd}");
        assert!(stderr(&out).contains("experiment table not found"));
    }
    let out = scatter(dir.path(), &["report", "--run", "does-not-exist"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn recorded_run_replays_to_identical_outputs() {
    let dir = TempDir::new().unwrap();
    let out = scatter(dir.path(), &["eval", "--rounds", "3", "--run-id", "rec"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let rec = run_dir(&dir, "rec");
    let cassette = rec.join("cassette.json");
    let out = scatter(
        dir.path(),
        &[
            "eval",
            "--rounds",
            "3",
            "--backend",
            "replay",
            "--cassette",
            cassette.to_str().unwrap(),
            "--run-id",
            "rep",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let rep = run_dir(&dir, "rep");
    for name in ["rounds.jsonl", "table.json"] {
        assert_eq!(
            fs::read(rec.join(name)).unwrap(),
            fs::read(rep.join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn unparseable_origin_is_a_parse_error() {
    let dir = TempDir::new().unwrap();
    let book = dir.path().join("book.json");
    fs::write(
        &book,
        r#"{"rules": [{"role": "diff", "response": "Summary: something\nOrigin: the moon"}]}"#,
    )
    .unwrap();
    let out = scatter(dir.path(), &["run", "--rulebook", book.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}

#[test]
fn unmatched_mock_request_is_a_backend_error() {
    let dir = TempDir::new().unwrap();
    let book = dir.path().join("book.json");
    fs::write(&book, r#"{"rules": []}"#).unwrap();
    let out = scatter(dir.path(), &["run", "--rulebook", book.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn flag_misuse_is_a_validation_error() {
    let dir = TempDir::new().unwrap();
    for args in [
        &["run", "--tau", "1.5"][..],
        &["run", "--max-attempts", "0"],
        &["run", "--temperature", "-1"],
        &["run", "--parallelism", "0"],
        &["run", "--cassette", "x.json"],
        &["run", "--backend", "replay"],
    ] {
        let out = scatter(dir.path(), args);
        assert_eq!(out.status.code(), Some(1), "{args:?}: {}", stderr(&out));
    }
}

#[test]
fn usage_errors_exit_one() {
    let dir = TempDir::new().unwrap();
    assert_eq!(
        scatter(dir.path(), &["eval", "--rounds", "many"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(scatter(dir.path(), &["fly"]).status.code(), Some(1));
    assert_eq!(scatter(dir.path(), &["--help"]).status.code(), Some(0));
}
