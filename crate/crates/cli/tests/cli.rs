//! End-to-end tests of the command-line interface, driving the compiled
//! binary the way a user would.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn lrcnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lrcnet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small config against the synthesized manifests, sized for test speed.
fn tiny_cfg(task: &str, epochs: usize, extra: &str) -> String {
    format!(
        "task = {task}\nepochs = {epochs}\nbatch_size = 8\nlr = 0.001\nseed = 7\n\
         train_manifest = train.tsv\ntest_manifest = test.tsv\n\
         m = 8\nt = 2\nk = 4,8\nd = 8\ngamma = 100\nh_kinds = 2\n{extra}"
    )
}

fn synth_tiny(dir: &Path, seg: bool) {
    let mut args = vec![
        "synth",
        "--out",
        path_str(dir),
        "--per-class-train",
        "4",
        "--per-class-test",
        "2",
        "--points",
        "64",
        "--noise",
        "0.02",
        "--seed",
        "3",
    ];
    if seg {
        args.push("--seg");
    }
    let out = lrcnet(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn synth_writes_dataset_manifests_and_config() {
    let dir = tempfile::tempdir().unwrap();
    synth_tiny(dir.path(), false);
    let manifest = fs::read_to_string(dir.path().join("train.tsv")).unwrap();
    assert_eq!(manifest.lines().count(), 16); // 4 kinds x 4 clouds
    for line in manifest.lines() {
        let (rel, class) = line.split_once('\t').unwrap();
        assert!(dir.path().join(rel).exists());
        assert!(class.parse::<u32>().unwrap() < 4);
    }
    assert!(dir.path().join("run.cfg").exists());
}

#[test]
fn train_outputs_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    synth_tiny(dir.path(), false);
    let cfg = dir.path().join("tiny.cfg");
    fs::write(&cfg, tiny_cfg("classify", 2, "num_classes = 4\n")).unwrap();

    let out_a = dir.path().join("run_a");
    let out_b = dir.path().join("run_b");
    for out in [&out_a, &out_b] {
        let res = lrcnet(&["train", "--config", path_str(&cfg), "--out", path_str(out)]);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    }
    let log_a = fs::read(out_a.join("metrics.tsv")).unwrap();
    let log_b = fs::read(out_b.join("metrics.tsv")).unwrap();
    assert_eq!(log_a, log_b);
    let ckpt_a = fs::read(out_a.join("model.ckpt")).unwrap();
    let ckpt_b = fs::read(out_b.join("model.ckpt")).unwrap();
    assert_eq!(ckpt_a, ckpt_b);
}

#[test]
fn eval_reports_perfect_accuracy_after_memorization() {
    let dir = tempfile::tempdir().unwrap();
    synth_tiny(dir.path(), false);
    // Evaluate on the train split itself: memorization reaches 1.0.
    let cfg = dir.path().join("memo.cfg");
    fs::write(
        &cfg,
        tiny_cfg("classify", 40, "num_classes = 4\n").replace(
            "test_manifest = test.tsv",
            "test_manifest = train.tsv",
        ),
    )
    .unwrap();
    let out = dir.path().join("run");
    let res = lrcnet(&["train", "--config", path_str(&cfg), "--out", path_str(&out)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));

    let eval = lrcnet(&["eval", "--ckpt", path_str(&out.join("model.ckpt"))]);
    assert!(eval.status.success(), "{}", String::from_utf8_lossy(&eval.stderr));
    let text = String::from_utf8(eval.stdout).unwrap();
    let acc_line = text.lines().find(|l| l.starts_with("accuracy")).unwrap();
    assert_eq!(acc_line.trim_end(), "accuracy\t1.0000", "full output:\n{text}");
}

#[test]
fn missing_config_exits_2_and_names_the_path() {
    let res = lrcnet(&["train", "--config", "missing.cfg"]);
    assert_eq!(res.status.code(), Some(2));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("missing.cfg"), "stderr: {err}");
}

#[test]
fn unknown_subcommand_exits_2() {
    let res = lrcnet(&["frobnicate"]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn gradcheck_passes_and_prints_error() {
    let res = lrcnet(&["gradcheck"]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let text = String::from_utf8(res.stdout).unwrap();
    assert!(text.contains("max rel err"), "stdout: {text}");
}

#[test]
fn segment_writes_relabeled_clouds_of_equal_size() {
    let dir = tempfile::tempdir().unwrap();
    synth_tiny(dir.path(), true);
    let cfg = dir.path().join("seg.cfg");
    fs::write(
        &cfg,
        tiny_cfg("segment", 2, "num_classes = 2\nnum_parts = 3\n"),
    )
    .unwrap();
    let out = dir.path().join("run");
    let res = lrcnet(&["train", "--config", path_str(&cfg), "--out", path_str(&out)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));

    let input = dir.path().join("test").join("cylinder_0000.xyz");
    let seg_out = dir.path().join("pred");
    let res = lrcnet(&[
        "segment",
        "--ckpt",
        path_str(&out.join("model.ckpt")),
        "--out",
        path_str(&seg_out),
        path_str(&input),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));

    let pred_path = seg_out.join("cylinder_0000_pred.xyz");
    let original: Vec<String> = fs::read_to_string(&input)
        .unwrap()
        .lines()
        .map(String::from)
        .collect();
    let predicted: Vec<String> = fs::read_to_string(&pred_path)
        .unwrap()
        .lines()
        .map(String::from)
        .collect();
    assert_eq!(original.len(), predicted.len());
    // Re-ingestable as a labeled dataset: 4 whitespace fields per line.
    for line in &predicted {
        assert_eq!(line.split_whitespace().count(), 4);
    }
}

#[test]
fn sweep_prints_ranked_table() {
    let dir = tempfile::tempdir().unwrap();
    synth_tiny(dir.path(), false);
    let cfg = dir.path().join("tiny.cfg");
    fs::write(&cfg, tiny_cfg("classify", 1, "num_classes = 4\n")).unwrap();
    let res = lrcnet(&[
        "sweep",
        "--config",
        path_str(&cfg),
        "--grid",
        "intra",
        "--out",
        path_str(&dir.path().join("sweep")),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let table = String::from_utf8(res.stdout).unwrap();
    assert_eq!(table.lines().count(), 5, "table:\n{table}");
    for label in ["All", "Mean", "Max", "Con"] {
        assert!(table.contains(label), "table:\n{table}");
    }

    let bad = lrcnet(&["sweep", "--config", path_str(&cfg), "--grid", "bogus"]);
    assert_eq!(bad.status.code(), Some(2));
}
