//! Runs the built binary over the core crate's fixtures.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures")
}

fn dstkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dstkit"))
        .args(args)
        .env_remove("DSTKIT_ENDPOINT")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

struct Run {
    dir: tempfile::TempDir,
    schema: String,
    dialogues: String,
}

impl Run {
    fn new() -> Self {
        let f = fixtures();
        Run {
            dir: tempfile::tempdir().unwrap(),
            schema: f.join("multiwoz22/schema.json").display().to_string(),
            dialogues: f.join("multiwoz22/test").display().to_string(),
        }
    }

    fn path(&self, name: &str) -> String {
        self.dir.path().join(name).display().to_string()
    }

    fn cmd(&self, sub: &str, extra: &[&str]) -> Output {
        let mut args = vec![
            sub,
            "--schema",
            &self.schema,
            "--dialogues",
            &self.dialogues,
            "--log",
            "error",
        ];
        args.extend_from_slice(extra);
        dstkit(&args)
    }
}

fn sha_line(out: &Output) -> String {
    stdout(out)
        .lines()
        .find(|l| l.starts_with("sha256:"))
        .unwrap()
        .to_string()
}

#[test]
fn oracle_run_scores_full_marks() {
    let run = Run::new();
    let (ex, preds, report) = (run.path("ex.jsonl"), run.path("p.jsonl"), run.path("r.json"));
    let out = run.cmd(
        "preprocess",
        &["--mode", "sequential", "--desc", "domain,slot,values", "--out", &ex],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("examples: 55"));
    let out = run.cmd("decode", &["--mode", "sequential", "--examples", &ex, "--out", &preds]);
    assert!(out.status.success());
    let out = run.cmd("evaluate", &["--predictions", &preds, "--report", &report]);
    assert!(out.status.success());
    let first = stdout(&out).lines().nth(1).unwrap().to_string();
    assert!(first.contains("100.0"), "{first}");
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["jga"], 1.0);
}

#[test]
fn preprocess_hash_is_stable_and_seed_sensitive() {
    let run = Run::new();
    let table = fixtures().join("multiwoz21_descriptions.tsv").display().to_string();
    let hash = |name: &str, seed: &str| {
        let out = run.cmd(
            "preprocess",
            &[
                "--desc",
                "all",
                "--descriptions",
                &table,
                "--seed",
                seed,
                "--out",
                &run.path(name),
            ],
        );
        assert!(out.status.success());
        sha_line(&out)
    };
    assert_eq!(hash("a", "5"), hash("b", "5"));
    let differs = (0..8).any(|s| hash("c", &s.to_string()) != hash("d", "5"));
    assert!(differs);
}

#[test]
fn planted_predictions_evaluate_and_compare() {
    let run = Run::new();
    let planted = fixtures()
        .join("multiwoz22/planted_predictions.jsonl")
        .display()
        .to_string();
    let out = run.cmd(
        "evaluate",
        &["--predictions", &planted, "--report", &run.path("r.json")],
    );
    assert!(out.status.success());
    // 47 of 55 turns are right.
    assert!(stdout(&out).contains("85.5"), "{}", stdout(&out));

    let (ex, gold) = (run.path("ex.jsonl"), run.path("gold.jsonl"));
    assert!(run.cmd("preprocess", &["--out", &ex]).status.success());
    assert!(run.cmd("decode", &["--examples", &ex, "--out", &gold]).status.success());
    let diff = run.path("diff.json");
    let out = run.cmd("compare", &["--a", &gold, "--b", &planted, "--out", &diff]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("only A correct: 8 turns"), "{text}");
    assert!(text.contains("arrival-relative|3"));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&diff).unwrap()).unwrap();
    assert_eq!(json["a_only_correct"].as_array().unwrap().len(), 8);
}

#[test]
fn stats_reports_slot_counts() {
    let run = Run::new();
    let out = run.cmd("stats", &["--json"]);
    assert!(out.status.success());
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["schema_all"]["categorical"], 21);
    assert_eq!(json["schema_all"]["non_categorical"], 40);
    assert_eq!(json["schema_evaluated"]["slots"], 53);
    let out = run.cmd("stats", &["--exclude", "none", "--json"]);
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["schema_evaluated"]["slots"], 61);
}

#[test]
fn bad_schema_path_is_an_input_error() {
    let out = dstkit(&[
        "preprocess",
        "--schema",
        "/no/such/schema.json",
        "--dialogues",
        "/tmp",
        "--out",
        "/tmp/x",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/schema.json"));
}

#[test]
fn remote_without_endpoint_is_an_input_error() {
    let run = Run::new();
    let ex = run.path("ex.jsonl");
    assert!(run.cmd("preprocess", &["--out", &ex]).status.success());
    let out = run.cmd(
        "decode",
        &["--examples", &ex, "--out", &run.path("p"), "--backend", "remote"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("DSTKIT_ENDPOINT"));
}

#[test]
fn unreachable_backend_exits_with_backend_code_and_keeps_journal() {
    let run = Run::new();
    let (ex, preds) = (run.path("ex.jsonl"), run.path("p.jsonl"));
    assert!(run.cmd("preprocess", &["--out", &ex]).status.success());
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let endpoint = format!("127.0.0.1:{port}");
    let out = run.cmd(
        "decode",
        &[
            "--examples",
            &ex,
            "--out",
            &preds,
            "--backend",
            "remote",
            "--endpoint",
            &endpoint,
            "--timeout",
            "1",
        ],
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(Path::new(&format!("{preds}.journal")).exists());
    assert!(!Path::new(&preds).exists());
}

#[test]
fn incomplete_predictions_are_an_evaluation_mismatch() {
    let run = Run::new();
    let partial = run.path("partial.jsonl");
    std::fs::write(
        &partial,
        "{\"dialogue_id\":\"thursday-train\",\"turn_index\":1,\"domain\":\"train\",\"slot\":\"day\",\"value\":\"thursday\"}\n",
    )
    .unwrap();
    let out = run.cmd(
        "evaluate",
        &["--predictions", &partial, "--report", &run.path("r.json")],
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn extractive_sequential_is_rejected() {
    let run = Run::new();
    let ex = run.path("ex.jsonl");
    assert!(run
        .cmd("preprocess", &["--mode", "sequential", "--out", &ex])
        .status
        .success());
    let out = run.cmd(
        "decode",
        &[
            "--mode",
            "sequential",
            "--examples",
            &ex,
            "--out",
            &run.path("p"),
            "--backend",
            "extractive",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
}
