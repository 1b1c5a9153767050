use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use asrrl_harness::records::{read_csv_file, RunRow, SummaryRow, Variant};
use asrrl_harness::sweep::SweepSummary;

const SMALL: [&str; 10] = [
    "--set", "encoder=mlp",
    "--set", "hidden=8",
    "--set", "rollout_batch=16",
    "--set", "minibatch_size=8",
    "--set", "train_iterations=2",
];

fn asrrl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_asrrl"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn gen(path: &Path, d_e: &str, extra: &[&str]) -> Output {
    let mut args = vec![
        "gen-data", "--seed", "3", "--speakers", "10", "--refs", "3", "--dim-e", d_e, "--dim-t", "3",
        "--texts", "2", "--out", path.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    asrrl(&args)
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_data_refuses_to_overwrite_without_force() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.tsv");
    assert_eq!(code(&gen(&path, "4", &[])), 0);
    let first = std::fs::read(&path).unwrap();
    let again = gen(&path, "4", &[]);
    assert_eq!(code(&again), 4, "{}", String::from_utf8_lossy(&again.stderr));
    assert_eq!(code(&gen(&path, "4", &["--force"])), 0);
    assert_eq!(std::fs::read(&path).unwrap(), first);
}

#[test]
fn bad_settings_exit_with_a_configuration_code() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.tsv");
    assert_eq!(code(&gen(&corpus, "4", &[])), 0);
    let out = dir.path().join("runs");
    for bad in ["no_such_key=1", "gamma=1.5", "gamma=abc", "segments=f_t,bogus"] {
        let r = asrrl(&["train", "--corpus", path_str(&corpus), "--out", path_str(&out), "--set", bad]);
        assert_eq!(code(&r), 2, "{bad}: {}", String::from_utf8_lossy(&r.stderr));
    }
    let r = asrrl(&["baseline", "--method", "rl", "--corpus", path_str(&corpus)]);
    assert_eq!(code(&r), 2);
    let r = asrrl(&["train", "--corpus", path_str(&dir.path().join("missing.tsv")), "--out", path_str(&out)]);
    assert_eq!(code(&r), 4);
}

#[test]
fn train_then_eval_round_trips_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.tsv");
    assert_eq!(code(&gen(&corpus, "2", &[])), 0);
    let runs = dir.path().join("runs");
    let mut args = vec!["train", "--corpus", path_str(&corpus), "--out", path_str(&runs), "--run-id", "a"];
    args.extend_from_slice(&SMALL);
    let r = asrrl(&args);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let run = runs.join("a");
    for f in ["train.csv", "checkpoint.json", "eval.csv", "summary.csv"] {
        assert!(run.join(f).is_file(), "{f} missing");
    }
    let train_rows: Vec<RunRow> = read_csv_file(&run.join("train.csv")).unwrap();
    assert_eq!(train_rows.len(), 2 * 6);
    let eval_rows: Vec<RunRow> = read_csv_file(&run.join("eval.csv")).unwrap();
    let variants: std::collections::BTreeSet<Variant> = eval_rows.iter().map(|r| r.variant).collect();
    assert_eq!(variants, [Variant::Rl, Variant::Raw, Variant::Oracle].into());

    // The same run id is refused rather than overwritten.
    assert_eq!(code(&asrrl(&args)), 2);

    let again = dir.path().join("again");
    std::fs::create_dir(&again).unwrap();
    let ckpt = run.join("checkpoint.json");
    let r = asrrl(&[
        "eval", "--checkpoint", path_str(&ckpt), "--corpus", path_str(&corpus), "--out", path_str(&again), "--run-id", "a",
    ]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let a: Vec<SummaryRow> = read_csv_file(&run.join("summary.csv")).unwrap();
    let b: Vec<SummaryRow> = read_csv_file(&again.join("summary.csv")).unwrap();
    assert_eq!(a, b);

    let other = dir.path().join("other.tsv");
    assert_eq!(code(&gen(&other, "3", &[])), 0);
    let r = asrrl(&["eval", "--checkpoint", path_str(&ckpt), "--corpus", path_str(&other)]);
    assert_eq!(code(&r), 2);

    std::fs::write(&ckpt, "{\"version\": 1, \"config\"").unwrap();
    let r = asrrl(&["eval", "--checkpoint", path_str(&ckpt), "--corpus", path_str(&corpus)]);
    assert_ne!(code(&r), 0);
}

#[test]
fn sweep_writes_complete_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.tsv");
    assert_eq!(code(&gen(&corpus, "4", &[])), 0);
    let out = dir.path().join("sweep");
    let mut args = vec![
        "sweep", "--axis", "steps", "--values", "1,2,3", "--corpus", path_str(&corpus), "--out", path_str(&out),
    ];
    args.extend_from_slice(&SMALL);
    let r = asrrl(&args);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let summary: Vec<SweepSummary> = read_csv_file(&out.join("sweep-steps-summary.csv")).unwrap();
    assert_eq!(summary.len(), 3 * 2);
    assert!(out.join("sweep-steps.csv").is_file());
    args[4] = "1,1";
    assert_eq!(code(&asrrl(&args)), 2);
}

#[test]
fn divergent_training_exits_with_code_three() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.tsv");
    assert_eq!(code(&gen(&corpus, "4", &[])), 0);
    let mut args = vec!["train", "--corpus", path_str(&corpus), "--out", path_str(dir.path())];
    args.extend_from_slice(&SMALL);
    args.extend_from_slice(&["--set", "action_scale=5", "--set", "divergence_window=3", "--set", "train_iterations=20"]);
    let r = asrrl(&args);
    assert_eq!(code(&r), 3, "{}", String::from_utf8_lossy(&r.stderr));
}

#[test]
fn echo_scorer_rejects_garbage() {
    let mut child = Command::new(env!("CARGO_BIN_EXE_asrrl"))
        .args(["echo-scorer", "--window", "4"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"this is not json\n").unwrap();
    let out = child.wait_with_output().unwrap();
    assert_ne!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
}
