//! CLI contracts: exit codes, config precedence, overwrite refusal, and
//! error surfaces, exercised through the real binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn cer() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cer"))
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("spawn cer")
}

fn synth(dir: &Path, labels: &str, per_class: usize, seed: u64) -> PathBuf {
    let out = run(cer()
        .args(["synth-data", "--labels", labels])
        .args(["--per-class", &per_class.to_string()])
        .args(["--image-size", "64"])
        .args(["--seed", &seed.to_string()])
        .arg("--out")
        .arg(dir));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    dir.join("manifest.csv")
}

/// Train a tiny ensemble quickly; returns the run directory.
fn quick_train(dir: &Path, train: &Path, val: &Path, seed: u64, epochs: usize, extra: &[&str]) -> PathBuf {
    let run_dir = dir.join(format!("run{seed}"));
    let out = run(cer()
        .args(["train", "--model", "ensemble", "--preset", "toy"])
        .arg("--train-manifest")
        .arg(train)
        .arg("--val-manifest")
        .arg(val)
        .args(["--labels", "compound"])
        .args(["--epochs", &epochs.to_string()])
        .args(["--batch-size", "16", "--base-lr", "3e-3"])
        .args(["--seed", &seed.to_string()])
        .arg("--out")
        .arg(&run_dir)
        .args(extra));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    run_dir
}

#[test]
fn usage_error_exits_2() {
    // Unknown model enum value.
    let out = run(cer().args([
        "train",
        "--model",
        "cnn",
        "--train-manifest",
        "x.csv",
        "--val-manifest",
        "y.csv",
    ]));
    assert_eq!(out.status.code(), Some(2));

    // Unknown subcommand.
    let out = run(cer().arg("frobnicate"));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_error_exits_1_and_success_exits_0() {
    let dir = tempfile::tempdir().unwrap();
    // Missing checkpoint: runtime failure.
    let out = run(cer()
        .args(["predict", "--checkpoint", "/does/not/exist.ckpt"])
        .arg("--frames-dir")
        .arg(dir.path())
        .arg("--out-csv")
        .arg(dir.path().join("p.csv")));
    assert_eq!(out.status.code(), Some(1));

    // Success path.
    let out = run(cer()
        .args(["synth-data", "--per-class", "1", "--image-size", "32"])
        .arg("--out")
        .arg(dir.path().join("s")));
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn every_command_reports_runtime_failures_as_1() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");

    let out = run(cer()
        .args(["merge-datasets", "--labels", "single"])
        .arg("--inputs")
        .arg(&missing)
        .arg("--out")
        .arg(dir.path().join("m")));
    assert_eq!(out.status.code(), Some(1), "merge on missing input");

    let out = run(cer()
        .args(["train", "--model", "vit", "--preset", "toy"])
        .arg("--train-manifest")
        .arg(&missing)
        .arg("--val-manifest")
        .arg(&missing)
        .arg("--out")
        .arg(dir.path().join("r")));
    assert_eq!(out.status.code(), Some(1), "train on missing manifest");

    let out = run(cer()
        .args(["evaluate", "--checkpoint", "/does/not/exist.ckpt"])
        .arg("--manifest")
        .arg(&missing)
        .arg("--out")
        .arg(dir.path().join("e")));
    assert_eq!(out.status.code(), Some(1), "evaluate on missing checkpoint");
}

#[test]
fn evaluate_prints_perfect_accuracy_after_overfitting() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(&dir.path().join("data"), "compound", 3, 11);
    let run_dir = quick_train(
        dir.path(),
        &manifest,
        &manifest,
        11,
        25,
        &["--flip-prob", "0"],
    );
    let out = run(cer()
        .args(["evaluate"])
        .arg("--checkpoint")
        .arg(run_dir.join("best.ckpt"))
        .arg("--manifest")
        .arg(&manifest)
        .arg("--out")
        .arg(dir.path().join("eval")));
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("acc,100.00"), "{stdout}");
    assert!(stdout.contains("F1,100.00"), "{stdout}");
}

#[test]
fn bad_config_file_exits_2_listing_all_problems() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "epochs=0\nbogus=1\n").unwrap();
    let out = run(cer()
        .arg("--config")
        .arg(&cfg)
        .args(["synth-data", "--per-class", "1"])
        .arg("--out")
        .arg(dir.path().join("s")));
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("epochs"), "{stderr}");
    assert!(stderr.contains("bogus"), "{stderr}");
}

#[test]
fn merge_refuses_overwrite_without_force() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(&dir.path().join("a"), "single", 2, 0);
    let out_dir = dir.path().join("merged");
    let merge = |force: bool| {
        let mut cmd = cer();
        cmd.args(["merge-datasets", "--labels", "single"])
            .arg("--inputs")
            .arg(&manifest)
            .args(["--val-fraction", "0.25", "--seed", "1"])
            .arg("--out")
            .arg(&out_dir);
        if force {
            cmd.arg("--force");
        }
        run(&mut cmd)
    };
    assert_eq!(merge(false).status.code(), Some(0));
    let second = merge(false);
    assert_eq!(second.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&second.stderr).contains("--force"));
    assert_eq!(merge(true).status.code(), Some(0));
}

#[test]
fn config_precedence_defaults_file_env_flags() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(&dir.path().join("data"), "compound", 2, 3);
    let cfg = dir.path().join("train.cfg");
    std::fs::write(&cfg, "epochs=2\nbatch_size=16\nbase_lr=0.003\nflip_prob=0\n").unwrap();

    let history_rows = |run_dir: &Path| {
        let text = std::fs::read_to_string(run_dir.join("history.csv")).unwrap();
        text.lines().count() - 1
    };

    // File only: 2 epochs.
    let r1 = dir.path().join("r1");
    let out = run(cer()
        .arg("--config")
        .arg(&cfg)
        .args(["train", "--model", "vit", "--preset", "toy", "--labels", "compound"])
        .arg("--train-manifest")
        .arg(&manifest)
        .arg("--val-manifest")
        .arg(&manifest)
        .arg("--out")
        .arg(&r1));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(history_rows(&r1), 2);

    // Environment beats the file: 3 epochs.
    let r2 = dir.path().join("r2");
    let out = run(cer()
        .env("CER_EPOCHS", "3")
        .arg("--config")
        .arg(&cfg)
        .args(["train", "--model", "vit", "--preset", "toy", "--labels", "compound"])
        .arg("--train-manifest")
        .arg(&manifest)
        .arg("--val-manifest")
        .arg(&manifest)
        .arg("--out")
        .arg(&r2));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(history_rows(&r2), 3);

    // Flag beats both: 1 epoch.
    let r3 = dir.path().join("r3");
    let out = run(cer()
        .env("CER_EPOCHS", "3")
        .arg("--config")
        .arg(&cfg)
        .args(["train", "--model", "vit", "--preset", "toy", "--labels", "compound"])
        .args(["--epochs", "1"])
        .arg("--train-manifest")
        .arg(&manifest)
        .arg("--val-manifest")
        .arg(&manifest)
        .arg("--out")
        .arg(&r3));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(history_rows(&r3), 1);
}

#[test]
fn predict_on_empty_directory_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(&dir.path().join("data"), "compound", 2, 5);
    let run_dir = quick_train(dir.path(), &manifest, &manifest, 5, 2, &[]);
    let empty = dir.path().join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    let out = run(cer()
        .args(["predict"])
        .arg("--checkpoint")
        .arg(run_dir.join("best.ckpt"))
        .arg("--frames-dir")
        .arg(&empty)
        .arg("--out-csv")
        .arg(dir.path().join("p.csv")));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no decodable image files"));
}

#[test]
fn evaluate_names_both_taxonomies_on_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let compound = synth(&dir.path().join("ce"), "compound", 2, 7);
    let single = synth(&dir.path().join("se"), "single", 2, 8);
    let run_dir = quick_train(dir.path(), &compound, &compound, 7, 2, &[]);
    let out = run(cer()
        .args(["evaluate"])
        .arg("--checkpoint")
        .arg(run_dir.join("best.ckpt"))
        .arg("--manifest")
        .arg(&single)
        .arg("--out")
        .arg(dir.path().join("eval")));
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("8-class"), "{stderr}");
    assert!(stderr.contains("7-class"), "{stderr}");
}

#[test]
fn every_backbone_trains_standalone() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(&dir.path().join("data"), "compound", 2, 17);
    for model in ["vit", "manet", "resnet"] {
        let run_dir = dir.path().join(model);
        let out = run(cer()
            .args(["train", "--model", model, "--preset", "toy", "--labels", "compound"])
            .arg("--train-manifest")
            .arg(&manifest)
            .arg("--val-manifest")
            .arg(&manifest)
            .args(["--epochs", "1", "--batch-size", "16", "--seed", "17"])
            .arg("--out")
            .arg(&run_dir));
        assert!(
            out.status.success(),
            "{model}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        assert!(run_dir.join("best.ckpt").exists(), "{model}");
    }
}

#[test]
fn ensemble_initializes_from_single_model_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(&dir.path().join("data"), "compound", 2, 13);

    // Stage 1: a standalone ViT classifier.
    let vit_run = dir.path().join("vit_run");
    let out = run(cer()
        .args(["train", "--model", "vit", "--preset", "toy", "--labels", "compound"])
        .arg("--train-manifest")
        .arg(&manifest)
        .arg("--val-manifest")
        .arg(&manifest)
        .args(["--epochs", "1", "--batch-size", "16", "--seed", "13"])
        .arg("--out")
        .arg(&vit_run));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    // Stage 2: the ensemble warm-started from it (head shapes differ and
    // are skipped; the vit subtree transfers).
    let ens_run = dir.path().join("ens_run");
    let out = run(cer()
        .args(["train", "--model", "ensemble", "--preset", "toy", "--labels", "compound"])
        .arg("--train-manifest")
        .arg(&manifest)
        .arg("--val-manifest")
        .arg(&manifest)
        .args(["--epochs", "1", "--batch-size", "16", "--seed", "14"])
        .arg("--init-from")
        .arg(vit_run.join("best.ckpt"))
        .arg("--out")
        .arg(&ens_run));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("initialized"), "{stdout}");
    assert!(ens_run.join("best.ckpt").exists());

    // Strict transfer of a mismatching head must fail loudly.
    let out = run(cer()
        .args(["train", "--model", "ensemble", "--preset", "toy", "--labels", "compound"])
        .arg("--train-manifest")
        .arg(&manifest)
        .arg("--val-manifest")
        .arg(&manifest)
        .args(["--epochs", "1", "--seed", "15", "--init-strict"])
        .arg("--init-from")
        .arg(vit_run.join("best.ckpt"))
        .arg("--out")
        .arg(dir.path().join("strict_run")));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("strict load failed"));
}

#[test]
fn evaluate_report_json_carries_per_class_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(&dir.path().join("data"), "compound", 2, 19);
    let run_dir = quick_train(dir.path(), &manifest, &manifest, 19, 2, &[]);
    let json_path = dir.path().join("report.json");
    let out = run(cer()
        .args(["evaluate"])
        .arg("--checkpoint")
        .arg(run_dir.join("best.ckpt"))
        .arg("--manifest")
        .arg(&manifest)
        .arg("--report-json")
        .arg(&json_path)
        .arg("--out")
        .arg(dir.path().join("eval")));
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&json_path).unwrap()).unwrap();
    assert_eq!(report["per_class_f1"].as_array().unwrap().len(), 7);
    assert_eq!(report["per_class_recall"].as_array().unwrap().len(), 7);
    assert_eq!(report["per_class_precision"].as_array().unwrap().len(), 7);
    assert!(report["macro_f1"].as_f64().is_some());
}

#[test]
fn evaluate_reuses_training_normalization_from_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(&dir.path().join("data"), "compound", 3, 23);
    let cfg = dir.path().join("norm.cfg");
    std::fs::write(&cfg, "mean=0.4,0.4,0.4\nstd=0.3,0.3,0.3\nflip_prob=0\n").unwrap();

    let run_dir = dir.path().join("run");
    let out = run(cer()
        .arg("--config")
        .arg(&cfg)
        .args(["train", "--model", "ensemble", "--preset", "toy", "--labels", "compound"])
        .arg("--train-manifest")
        .arg(&manifest)
        .arg("--val-manifest")
        .arg(&manifest)
        .args(["--epochs", "4", "--batch-size", "16", "--base-lr", "3e-3", "--seed", "23"])
        .arg("--out")
        .arg(&run_dir));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    // Best row of the history, printed at the metrics table's 2 decimals.
    let history = std::fs::read_to_string(run_dir.join("history.csv")).unwrap();
    let best_f1 = history
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(3).unwrap().parse::<f64>().unwrap())
        .fold(f64::NEG_INFINITY, f64::max);

    // Evaluate WITHOUT the config file: the checkpoint carries the custom
    // normalization, so the metrics must still line up.
    let out = run(cer()
        .args(["evaluate"])
        .arg("--checkpoint")
        .arg(run_dir.join("best.ckpt"))
        .arg("--manifest")
        .arg(&manifest)
        .arg("--out")
        .arg(dir.path().join("eval")));
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let expected = format!("F1,{best_f1:.2}");
    assert!(stdout.contains(&expected), "want '{expected}' in:\n{stdout}");
}

#[test]
fn predict_writes_error_rows_unless_strict() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(&dir.path().join("data"), "compound", 2, 9);
    let run_dir = quick_train(dir.path(), &manifest, &manifest, 9, 2, &[]);

    let frames = dir.path().join("frames");
    std::fs::create_dir_all(&frames).unwrap();
    std::fs::copy(
        dir.path().join("data/images/class0_000.png"),
        frames.join("frame_1.png"),
    )
    .unwrap();
    std::fs::write(frames.join("frame_2.png"), b"broken").unwrap();

    let csv = dir.path().join("pred.csv");
    let out = run(cer()
        .args(["predict"])
        .arg("--checkpoint")
        .arg(run_dir.join("best.ckpt"))
        .arg("--frames-dir")
        .arg(&frames)
        .arg("--out-csv")
        .arg(&csv));
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[2].starts_with("frame_2.png,ERROR,"), "{}", lines[2]);

    // Strict aborts instead.
    let out = run(cer()
        .args(["predict", "--strict"])
        .arg("--checkpoint")
        .arg(run_dir.join("best.ckpt"))
        .arg("--frames-dir")
        .arg(&frames)
        .arg("--out-csv")
        .arg(dir.path().join("pred2.csv")));
    assert_eq!(out.status.code(), Some(1));
}
