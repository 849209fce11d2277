//! End-to-end tests of the `relearn` binary: exit codes, output formats,
//! config-file precedence, and determinism across thread counts.

use std::path::Path;
use std::process::{Command, Output};

use relearn::datamodel;

fn relearn() -> Command {
    Command::new(env!("CARGO_BIN_EXE_relearn"))
}

fn run(args: &[&str]) -> Output {
    relearn().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("utf-8 stdout")
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).expect("utf-8 stderr")
}

/// Writes a small synthetic dataset into `dir` and returns the data flags
/// shared by train/predict/evaluate.
fn small_dataset(dir: &Path) -> Vec<String> {
    let out = run(&[
        "synth",
        "--out-dir",
        dir.to_str().unwrap(),
        "--num-videos",
        "30",
        "--num-clusters",
        "3",
        "--dim",
        "8",
        "--min-frames",
        "3",
        "--max-frames",
        "5",
        "--seed",
        "3",
    ]);
    assert!(out.status.success(), "synth failed: {}", stderr(&out));
    ["features.tsv", "relevance.tsv", "splits.tsv"]
        .iter()
        .zip(["--features", "--relevance", "--splits"])
        .flat_map(|(f, flag)| [flag.to_string(), dir.join(f).to_str().unwrap().to_string()])
        .collect()
}

fn train_small(dir: &Path, extra: &[&str]) -> Output {
    let mut args: Vec<String> = vec!["train".into()];
    args.extend(small_dataset(dir));
    args.extend(
        [
            "--frames",
            dir.join("frames.tsv").to_str().unwrap(),
            "--out-model",
            dir.join("model.tsv").to_str().unwrap(),
            "--proj-dim",
            "8",
            "--stride",
            "2",
            "--max-epochs",
            "2",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    args.extend(extra.iter().map(|s| s.to_string()));
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    run(&args)
}

#[test]
fn synth_writes_the_four_dataset_files() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path());
    for f in ["features.tsv", "frames.tsv", "relevance.tsv", "splits.tsv"] {
        assert!(dir.path().join(f).is_file(), "missing {f}");
    }
}

#[test]
fn missing_input_exits_2_and_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "train",
        "--features",
        "missing.tsv",
        "--relevance",
        "also-missing.tsv",
        "--splits",
        "x.tsv",
        "--out-model",
        dir.path().join("m.tsv").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.starts_with("error:"), "unexpected stderr: {err}");
    assert!(err.contains("missing.tsv"), "path not named: {err}");
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = run(&["train", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
    let out = run(&["predict", "--eval-split", "train"]);
    assert_eq!(out.status.code(), Some(1), "train is not a valid seed split");
}

#[test]
fn help_lists_the_documented_defaults() {
    let out = run(&["train", "--help"]);
    assert!(out.status.success());
    let text = stdout(&out);
    for needle in [
        "[default: 0.2]",   // m1
        "[default: 0.05]",  // m2
        "[default: 1]",     // alpha
        "[default: 0.001]", // lr
        "[default: 32]",    // batch size
        "[default: 512]",   // projection dimension
        "[default: 12]",    // stride
        "[default: 50]",    // max epochs
        "[default: netrl]",
    ] {
        assert!(text.contains(needle), "{needle} not in train --help:\n{text}");
    }
    let out = run(&["--help"]);
    assert!(out.status.success());
    let text = stdout(&out);
    for sub in ["synth", "train", "augment", "predict", "evaluate", "gradcheck"] {
        assert!(text.contains(sub), "{sub} not listed in --help");
    }
    assert!(run(&["--version"]).status.success());
}

#[test]
fn gradcheck_prints_the_max_relative_error() {
    let out = run(&["gradcheck", "--seed", "7", "--draws", "10"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(
        text.contains("max relative gradient error"),
        "unexpected output: {text}"
    );
}

#[test]
fn train_logs_one_line_per_epoch_and_writes_the_model() {
    let dir = tempfile::tempdir().unwrap();
    let out = train_small(dir.path(), &["--seed", "5"]);
    assert!(out.status.success(), "train failed: {}", stderr(&out));
    let log = stdout(&out);
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines.len(), 2, "expected 2 epoch lines:\n{log}");
    for (i, line) in lines.iter().enumerate() {
        let fields: Vec<&str> = line.split('\t').collect();
        assert_eq!(fields.len(), 6, "bad log line: {line}");
        assert_eq!(fields[0], (i + 1).to_string());
    }
    let model = datamodel::load_model(&dir.path().join("model.tsv")).unwrap();
    assert_eq!(model.d(), 8);
    assert_eq!(model.p(), 8);
}

#[test]
fn predict_emits_seed_and_comma_separated_candidates() {
    let dir = tempfile::tempdir().unwrap();
    let out = train_small(dir.path(), &[]);
    assert!(out.status.success(), "train failed: {}", stderr(&out));
    let mut args: Vec<String> = vec![
        "predict".into(),
        "--model".into(),
        dir.path().join("model.tsv").to_str().unwrap().into(),
        "--eval-split".into(),
        "test".into(),
        "--k".into(),
        "4".into(),
    ];
    args.extend(small_dataset(dir.path()));
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    let out = run(&args);
    assert!(out.status.success(), "predict failed: {}", stderr(&out));
    let text = stdout(&out);
    assert!(!text.is_empty());
    for line in text.lines() {
        let (seed, rest) = line.split_once('\t').expect("seed\\tcandidates");
        let ids: Vec<&str> = rest.split(',').collect();
        assert_eq!(ids.len(), 4, "expected 4 candidates: {line}");
        assert!(!ids.contains(&seed), "seed ranked itself: {line}");
    }
}

#[test]
fn evaluate_emits_the_report_row_and_per_seed_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = train_small(dir.path(), &[]);
    assert!(out.status.success(), "train failed: {}", stderr(&out));
    let csv = dir.path().join("per-seed.csv");
    let mut args: Vec<String> = vec![
        "evaluate".into(),
        "--model".into(),
        dir.path().join("model.tsv").to_str().unwrap().into(),
        "--eval-split".into(),
        "val".into(),
        "--per-seed".into(),
        csv.to_str().unwrap().into(),
    ];
    args.extend(small_dataset(dir.path()));
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    let out = run(&args);
    assert!(out.status.success(), "evaluate failed: {}", stderr(&out));
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("hit@5\thit@10\thit@20\thit@30\trecall@50\trecall@100\trecall@200\trecall@300\tSum")
    );
    let row: Vec<&str> = lines.next().expect("value row").split('\t').collect();
    assert_eq!(row.len(), 9);
    for v in &row {
        v.parse::<f64>().expect("numeric cell");
    }
    let csv_text = std::fs::read_to_string(&csv).unwrap();
    let mut rows = csv_text.lines();
    assert_eq!(
        rows.next(),
        Some("seed,hit@5,hit@10,hit@20,hit@30,recall@50,recall@100,recall@200,recall@300")
    );
    assert!(rows.next().is_some(), "no per-seed rows");
}

#[test]
fn augment_output_round_trips_through_the_feature_loader() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path());
    let out_path = dir.path().join("augmented.tsv");
    let out = run(&[
        "augment",
        "--features",
        dir.path().join("features.tsv").to_str().unwrap(),
        "--frames",
        dir.path().join("frames.tsv").to_str().unwrap(),
        "--splits",
        dir.path().join("splits.tsv").to_str().unwrap(),
        "--stride",
        "2",
        "--seed",
        "9",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "augment failed: {}", stderr(&out));
    let text = std::fs::read_to_string(&out_path).unwrap();
    assert!(text.starts_with("#dim 8\n"));
    assert!(text.lines().nth(1).unwrap().starts_with("v00#0\t"));
    // Stride 2 over ≥3 frames gives 3 instances per video, 30 videos.
    let augmented = datamodel::load_video_features(&out_path).unwrap();
    assert_eq!(augmented.dim, 8);
    assert_eq!(augmented.len(), 90);
}

#[test]
fn config_file_fills_gaps_but_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("train.cfg");
    std::fs::write(&cfg, "# hyperparameters\nmax-epochs=9\nlr=0.01\nseed=5\n").unwrap();
    let out = train_small(
        dir.path(),
        &["--config", cfg.to_str().unwrap(), "--seed", "5"],
    );
    assert!(out.status.success(), "train failed: {}", stderr(&out));
    let log = stdout(&out);
    // --max-epochs 2 (a flag from train_small) beats the file's 9; the
    // file's lr=0.01 beats the built-in 0.001.
    assert_eq!(log.lines().count(), 2, "flag should cap epochs:\n{log}");
    let lr_field = log.lines().next().unwrap().split('\t').nth(4).unwrap().to_string();
    assert_eq!(lr_field, "1e-2", "config lr ignored:\n{log}");
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("train.cfg");
    std::fs::write(&cfg, "learning-rate=0.01\n").unwrap();
    let out = train_small(dir.path(), &["--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stderr(&out).contains("unknown configuration key"),
        "stderr: {}",
        stderr(&out)
    );
}

#[test]
fn evaluation_is_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let out = train_small(dir.path(), &[]);
    assert!(out.status.success(), "train failed: {}", stderr(&out));
    let mut base: Vec<String> = vec![
        "evaluate".into(),
        "--model".into(),
        dir.path().join("model.tsv").to_str().unwrap().into(),
        "--eval-split".into(),
        "val".into(),
    ];
    base.extend(small_dataset(dir.path()));

    let run_with = |threads: Option<&str>, env: Option<&str>| {
        let mut args = base.clone();
        if let Some(t) = threads {
            args.extend(["--threads".to_string(), t.to_string()]);
        }
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let mut cmd = relearn();
        cmd.args(&args);
        if let Some(t) = env {
            cmd.env("RELEARN_THREADS", t);
        }
        let out = cmd.output().expect("binary runs");
        assert!(out.status.success(), "evaluate failed: {}", stderr(&out));
        stdout(&out)
    };
    let one = run_with(Some("1"), None);
    let four = run_with(Some("4"), None);
    let via_env = run_with(None, Some("4"));
    assert_eq!(one, four, "thread count changed the report");
    assert_eq!(one, via_env);

    let mut cmd = relearn();
    cmd.args(base.iter().map(String::as_str)).env("RELEARN_THREADS", "not-a-number");
    let out = cmd.output().expect("binary runs");
    assert_eq!(out.status.code(), Some(2), "bad RELEARN_THREADS should be a data error");
}
