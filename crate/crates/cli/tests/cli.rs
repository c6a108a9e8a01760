//! End-to-end tests that spawn the real binary: exit-code contract,
//! byte-level determinism, resume semantics, and the export formats.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn attwarp(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_attwarp"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary spawns")
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn metrics_of(out: &Output) -> BTreeMap<String, String> {
    stdout_of(out)
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        stdout_of(out),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn synth_classes(dir: &Path, seed: u64, name: &str) -> PathBuf {
    let out = attwarp(
        &[
            "synth",
            "--classes",
            "2",
            "--per-class",
            "10",
            "--length",
            "24",
            "--seed",
            &seed.to_string(),
            "--out",
            name,
        ],
        dir,
    );
    assert_success(&out);
    dir.join(name)
}

fn write_run_config(dir: &Path, data: &str) -> PathBuf {
    let path = dir.join("run.toml");
    fs::write(
        &path,
        format!(
            r#"
version = 1
name = "t"
seed = 5

[data]
path = "{data}"
train_fraction = 0.6
val_fraction = 0.4

[arch]
levels = 1
channels = [4]
kernel = 3

[pretrain]
batch_size = 4
max_iters = 6
eval_every = 3
lr = 0.001
val_pairs = 4
window = 0

[contrastive]
tau = 1.0
ratio = [1, 2]
batch_size = 6
max_iters = 4
eval_every = 2
lr = 0.001
knn_k = 1
"#
        ),
    )
    .unwrap();
    path
}

#[test]
fn synth_reruns_are_byte_identical_and_seeds_differ() {
    let dir = tempfile::tempdir().unwrap();
    let (da, db) = (dir.path().join("ra"), dir.path().join("rb"));
    fs::create_dir_all(&da).unwrap();
    fs::create_dir_all(&db).unwrap();
    let a = synth_classes(&da, 7, "d.tsv");
    let b = synth_classes(&db, 7, "d.tsv");
    let c = synth_classes(dir.path(), 8, "c.tsv");
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
    // The sidecar manifests of identical runs match too.
    assert_eq!(
        fs::read(da.join("d.manifest.json")).unwrap(),
        fs::read(db.join("d.manifest.json")).unwrap()
    );
}

#[test]
fn invalid_flag_value_is_a_usage_error_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let out = attwarp(
        &[
            "synth", "--classes", "two", "--per-class", "5", "--length", "16", "--seed", "1",
            "--out", "x.tsv",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("Usage") || stderr.contains("usage"), "{stderr}");
}

#[test]
fn missing_mode_flags_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    // Neither --classes nor --subjects.
    let out = attwarp(
        &["synth", "--length", "16", "--seed", "1", "--out", "x.tsv"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    // Eval with no mode.
    let out = attwarp(&["eval", "--baseline", "dtw"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unreadable_data_is_exit_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_run_config(dir.path(), "missing.tsv");
    let out = attwarp(
        &["pretrain", "--config", cfg.to_str().unwrap(), "--out-dir", "r"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn dist_of_identical_files_is_zero_and_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_classes(dir.path(), 3, "d.tsv");
    let text = fs::read_to_string(&data).unwrap();
    fs::write(dir.path().join("one.tsv"), text.lines().next().unwrap()).unwrap();
    let args = ["dist", "one.tsv", "one.tsv", "--baseline", "dtw"];
    let first = attwarp(&args, dir.path());
    assert_success(&first);
    assert_eq!(metrics_of(&first)["distance"], "0");
    let second = attwarp(&args, dir.path());
    assert_eq!(stdout_of(&first), stdout_of(&second));
}

#[test]
fn max_iter_zero_writes_an_initialized_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_classes(dir.path(), 3, "d.tsv");
    let cfg = write_run_config(dir.path(), data.to_str().unwrap());
    let out = attwarp(
        &[
            "pretrain",
            "--config",
            cfg.to_str().unwrap(),
            "--out-dir",
            "r0",
            "--max-iter",
            "0",
        ],
        dir.path(),
    );
    assert_success(&out);
    assert_eq!(metrics_of(&out)["iterations"], "0");
    assert!(dir.path().join("r0/pretrain.ckpt").exists());
    assert!(dir.path().join("r0/manifest.json").exists());
}

#[test]
fn resumed_run_reconstructs_the_uninterrupted_trace() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_classes(dir.path(), 3, "d.tsv");
    let cfg = write_run_config(dir.path(), data.to_str().unwrap());
    let cfg = cfg.to_str().unwrap();

    let full = attwarp(
        &["pretrain", "--config", cfg, "--out-dir", "full"],
        dir.path(),
    );
    assert_success(&full);
    let full_trace = fs::read(dir.path().join("full/trace.jsonl")).unwrap();

    // Simulate an interruption: keep only the first two records.
    let out = attwarp(
        &["pretrain", "--config", cfg, "--out-dir", "cut"],
        dir.path(),
    );
    assert_success(&out);
    let cut_path = dir.path().join("cut/trace.jsonl");
    let kept: String = fs::read_to_string(&cut_path)
        .unwrap()
        .lines()
        .take(2)
        .map(|l| format!("{l}\n"))
        .collect();
    fs::write(&cut_path, kept).unwrap();

    let resumed = attwarp(
        &["pretrain", "--config", cfg, "--out-dir", "cut", "--resume"],
        dir.path(),
    );
    assert_success(&resumed);
    assert_eq!(fs::read(&cut_path).unwrap(), full_trace);
    assert_eq!(stdout_of(&full), stdout_of(&resumed));
    assert_eq!(
        fs::read(dir.path().join("full/pretrain.ckpt")).unwrap(),
        fs::read(dir.path().join("cut/pretrain.ckpt")).unwrap()
    );

    // Without --resume the populated directory is refused.
    let refused = attwarp(&["pretrain", "--config", cfg, "--out-dir", "cut"], dir.path());
    assert_eq!(refused.status.code(), Some(2));
}

#[test]
fn resume_under_a_different_config_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_classes(dir.path(), 3, "d.tsv");
    let cfg = write_run_config(dir.path(), data.to_str().unwrap());
    let cfg = cfg.to_str().unwrap();
    let out = attwarp(&["pretrain", "--config", cfg, "--out-dir", "r"], dir.path());
    assert_success(&out);
    let out = attwarp(
        &[
            "pretrain", "--config", cfg, "--out-dir", "r", "--resume", "--seed", "99",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("different config"));
}

#[test]
fn training_reruns_print_identical_metric_summaries() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_classes(dir.path(), 3, "d.tsv");
    let cfg = write_run_config(dir.path(), data.to_str().unwrap());
    let cfg = cfg.to_str().unwrap();
    let a = attwarp(&["train", "--config", cfg, "--out-dir", "a"], dir.path());
    let b = attwarp(&["train", "--config", cfg, "--out-dir", "b"], dir.path());
    assert_success(&a);
    assert_success(&b);
    assert_eq!(stdout_of(&a), stdout_of(&b));
    assert_eq!(
        fs::read(dir.path().join("a/contrastive.ckpt")).unwrap(),
        fs::read(dir.path().join("b/contrastive.ckpt")).unwrap()
    );
}

#[test]
fn dumped_attention_rows_are_stochastic() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_classes(dir.path(), 3, "d.tsv");
    let cfg = write_run_config(dir.path(), data.to_str().unwrap());
    let out = attwarp(
        &[
            "pretrain",
            "--config",
            cfg.to_str().unwrap(),
            "--out-dir",
            "r",
            "--max-iter",
            "0",
        ],
        dir.path(),
    );
    assert_success(&out);
    let text = fs::read_to_string(&data).unwrap();
    let mut lines = text.lines();
    fs::write(dir.path().join("a.tsv"), lines.next().unwrap()).unwrap();
    fs::write(dir.path().join("b.tsv"), lines.next_back().unwrap()).unwrap();
    let out = attwarp(
        &[
            "dist",
            "a.tsv",
            "b.tsv",
            "--checkpoint",
            "r/pretrain.ckpt",
            "--dump-attn",
            "attn.csv",
        ],
        dir.path(),
    );
    assert_success(&out);
    let dump = fs::read_to_string(dir.path().join("attn.csv")).unwrap();
    let mut sections = 0;
    for line in dump.lines() {
        if line.starts_with('#') {
            sections += 1;
            continue;
        }
        let sum: f64 = line.split(',').map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-6, "row sums to {sum}");
    }
    assert_eq!(sections, 2, "expected P_s and P_t headers");
}

#[test]
fn mcnemar_against_identical_predictions_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_classes(dir.path(), 3, "d.tsv");
    let data = data.to_str().unwrap();
    let knn = [
        "eval", "--baseline", "dtw", "--knn", "1", "--refs", data, "--queries", data,
        "--out-dir", "e1",
    ];
    let out = attwarp(&knn, dir.path());
    assert_success(&out);
    let out = attwarp(
        &[
            "eval",
            "--baseline",
            "dtw",
            "--knn",
            "1",
            "--refs",
            data,
            "--queries",
            data,
            "--out-dir",
            "e2",
            "--mcnemar",
            "e1/predictions.csv",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eer_on_blatant_forgeries_is_small() {
    let dir = tempfile::tempdir().unwrap();
    let out = attwarp(
        &[
            "synth",
            "--subjects",
            "5",
            "--genuine-per",
            "6",
            "--forgery-per",
            "6",
            "--length",
            "32",
            "--weight",
            "1.0",
            "--seed",
            "11",
            "--out",
            "subj.json",
        ],
        dir.path(),
    );
    assert_success(&out);
    let out = attwarp(
        &[
            "eval",
            "--baseline",
            "dtw",
            "--eer",
            "--data",
            "subj.json",
            "--refs-per-subject",
            "2",
            "--out-dir",
            "e",
        ],
        dir.path(),
    );
    assert_success(&out);
    let eer: f64 = metrics_of(&out)["eer"].parse().unwrap();
    assert!(eer <= 0.05, "weight-1 forgeries should be easy, eer = {eer}");
    assert!(dir.path().join("e/scores.csv").exists());
    assert!(dir.path().join("e/histogram.csv").exists());
}
