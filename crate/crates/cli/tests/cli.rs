use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn dprnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dprnn"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = dprnn(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(
                    path.strip_prefix(root).unwrap().to_path_buf(),
                    std::fs::read(&path).unwrap(),
                );
            }
        }
    }
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small synthetic dataset plus a model trained on it for two epochs.
fn trained(dir: &Path) -> (PathBuf, PathBuf) {
    let data = dir.join("data");
    ok(&[
        "synth",
        "--out",
        s(&data),
        "--train-pairs",
        "40",
        "--test-pairs",
        "20",
        "--seed",
        "3",
    ]);
    let manifest = data.join("manifest.txt");
    let run = dir.join("run");
    ok(&[
        "train",
        "--data",
        s(&manifest),
        "--out",
        s(&run),
        "--h",
        "8",
        "--q",
        "8",
        "--epochs",
        "2",
        "--batch-size",
        "10",
        "--d",
        "3",
        "--lr",
        "0.01",
    ]);
    (manifest, run.join("model.ckpt"))
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&[
            "synth",
            "--out",
            s(out),
            "--seed",
            "7",
            "--train-pairs",
            "30",
            "--test-pairs",
            "10",
        ]);
    }
    let (ta, tb) = (tree(&a), tree(&b));
    assert!(ta.len() > 3);
    assert_eq!(ta, tb);
}

#[test]
fn gradcheck_passes_on_fresh_parameters() {
    let out = ok(&["gradcheck"]);
    assert!(out.contains("batch_triplet_loss"));
    assert!(!out.contains("FAILED"));
}

#[test]
fn eval_reports_every_fold_and_the_mean() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, ckpt) = trained(dir.path());
    let report = ok(&[
        "eval",
        "--data",
        s(&manifest),
        "--checkpoint",
        s(&ckpt),
        "--folds",
        "5",
    ]);
    assert!(report.contains("folds=5\n"));
    for f in 1..=5 {
        assert!(report.contains(&format!("fold{f}.images=4\n")), "{report}");
        assert!(report.contains(&format!("fold{f}.sentence_r1=")));
    }
    assert!(report.contains("mean.image_r10="));
    assert!(!report.contains("fold6"));

    // Averaging a model with itself changes nothing.
    let twice = ok(&[
        "eval",
        "--data",
        s(&manifest),
        "--checkpoint",
        s(&ckpt),
        "--checkpoint",
        s(&ckpt),
        "--folds",
        "5",
    ]);
    assert_eq!(twice, report);
}

#[test]
fn train_writes_log_and_checkpoints_with_flag_over_file_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&[
        "synth",
        "--out",
        s(&data),
        "--train-pairs",
        "20",
        "--test-pairs",
        "4",
        "--seed",
        "1",
    ]);
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# tiny\nh=8\nq=8\nepochs=1\nbatch_size=10\nd=2\n").unwrap();
    let run = dir.path().join("run");
    ok(&[
        "train",
        "--data",
        s(&data.join("manifest.txt")),
        "--out",
        s(&run),
        "--config",
        s(&cfg),
        "--epochs",
        "2",
    ]);
    let log = std::fs::read_to_string(run.join("loss.log")).unwrap();
    assert_eq!(log.lines().count(), 2, "{log}");
    assert!(log.starts_with("epoch=1 "));
    for name in ["epoch-001.ckpt", "epoch-002.ckpt", "model.ckpt"] {
        assert!(run.join(name).is_file(), "{name}");
    }
}

#[test]
fn retrieve_and_dump_name_real_items() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, ckpt) = trained(dir.path());
    let hits = ok(&[
        "retrieve",
        "--data",
        s(&manifest),
        "--checkpoint",
        s(&ckpt),
        "--query",
        "img00040",
        "--top-k",
        "3",
    ]);
    let lines: Vec<&str> = hits.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines
        .iter()
        .all(|l| l.split('\t').nth(1).unwrap().starts_with("txt")));
    let by_text = ok(&[
        "retrieve",
        "--data",
        s(&manifest),
        "--checkpoint",
        s(&ckpt),
        "--query",
        "txt00045",
    ]);
    assert!(by_text.lines().all(|l| l.contains("\timg")));

    let dump = ok(&[
        "dump-attention",
        "--data",
        s(&manifest),
        "--checkpoint",
        s(&ckpt),
        "--image",
        "img00040",
        "--text",
        "txt00040",
    ]);
    assert!(dump.starts_with("image=img00040\ntext=txt00040\n"));
    assert!(dump.contains("[word_to_object_attention]"));
    assert!(dump.contains("[reordering] object anchor_word slot"));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(dprnn(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(dprnn(&["eval", "--bogus"]).status.code(), Some(2));
    assert_eq!(dprnn(&["train", "--gamma", "wide"]).status.code(), Some(2));
    assert_eq!(dprnn(&[]).status.code(), Some(2));
}

#[test]
fn runtime_failures_exit_1_with_a_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.txt");
    let out = dprnn(&["eval", "--data", s(&missing), "--checkpoint", "x.ckpt"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("missing.txt"), "{err}");
    assert_eq!(
        dprnn(&["synth", "--out", s(dir.path()), "--concepts", "5000"])
            .status
            .code(),
        Some(1)
    );
}
