use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ddlab::train::RunResult;
use ddlab_cli::commands;
use ddlab_cli::manifest::RunManifest;
use ddlab_cli::{EvalArgs, SplitArg};

fn ddlab(args: &[&str], artifacts: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ddlab"))
        .args(args)
        .env(ddlab_cli::ARTIFACTS_ENV, artifacts)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], artifacts: &Path) -> String {
    let out = ddlab(args, artifacts);
    assert!(
        out.status.success(),
        "{:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn gen(dir: &Path, name: &str, images: usize, seed: u64) -> PathBuf {
    let path = dir.join(name);
    ok(
        &["gen-data", "--images", &images.to_string(), "--seed", &seed.to_string(), "--out", path.to_str().unwrap()],
        dir,
    );
    path
}

fn train_one_epoch(dir: &Path, data: &Path, model: &str, out: &Path, extra: &[&str]) -> PathBuf {
    let mut args = vec![
        "train", "--model", model, "--data", data.to_str().unwrap(), "--epochs", "1", "--seeds", "1", "--quiet", "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    ok(&args, dir);
    out.join(model).join("seed-1")
}

#[test]
fn gen_data_counts_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen(dir.path(), "a.bin", 100, 4);
    let b = gen(dir.path(), "b.bin", 100, 4);
    let c = gen(dir.path(), "c.bin", 100, 5);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());

    let summary = ok(&["gen-data", "--images", "100", "--seed", "4", "--out", a.to_str().unwrap()], dir.path());
    assert!(summary.contains("100 images, 2000 QA records"), "{}", summary);
    assert!(summary.contains("train 80 / val 10 / test 10"), "{}", summary);

    let manifest = RunManifest::load(&commands::dataset_manifest_path(&a)).unwrap();
    assert_eq!(manifest.dataset_sha256.unwrap(), ddlab_cli::manifest::sha256_file(&a).unwrap());
    assert_eq!(manifest.seeds, vec![4]);
    assert_eq!(manifest.config["dataset"]["images"], 100);
}

#[test]
fn gen_data_defaults_under_the_artifact_root() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["gen-data", "--images", "10", "--seed", "2"], dir.path());
    assert!(dir.path().join("data").join("soc-10-2.bin").is_file());
    assert!(dir.path().join("data").join("soc-10-2.bin.manifest.json").is_file());
}

#[test]
fn one_epoch_run_emits_every_artifact_and_eval_agrees() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "soc.bin", 40, 1);
    let root = dir.path().join("runs");
    let run = train_one_epoch(dir.path(), &data, "cnn-mlp", &root, &[]);
    for name in ["metrics.csv", "best.ckpt", "final.ckpt", "result.json", "manifest.json"] {
        assert!(run.join(name).is_file(), "{} missing", name);
    }
    let exp = root.join("cnn-mlp");
    for name in ["manifest.json", "summary.txt", "summary.csv"] {
        assert!(exp.join(name).is_file(), "{} missing", name);
    }
    let csv = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "epoch,lr,train_loss,val_nonrel,val_rel,val_combined");
    assert_eq!(csv.lines().count(), 2);

    let result = RunResult::load(&run.join("result.json")).unwrap();
    let eval = |split| {
        commands::eval(&EvalArgs {
            checkpoint: run.join("best.ckpt"),
            data: data.clone(),
            split,
            model: None,
            batch_size: 8,
        })
        .unwrap()
    };
    assert_eq!(eval(SplitArg::Test), result.test);
    assert_eq!(eval(SplitArg::Val), result.history[result.best_epoch - 1].val);

    let manifest = RunManifest::load(&run.join("manifest.json")).unwrap();
    assert_eq!(manifest.seeds, vec![1]);
    assert_eq!(manifest.config["train"]["epochs"], 1);
    assert_eq!(manifest.dataset_sha256.as_deref(), Some(ddlab_cli::manifest::sha256_file(&data).unwrap().as_str()));
    assert!(manifest.finished >= manifest.started);

    let printed = ok(&["eval", "--checkpoint", run.join("best.ckpt").to_str().unwrap(), "--data", data.to_str().unwrap()], dir.path());
    assert!(printed.starts_with("Test (4 images)"), "{}", printed);
}

#[test]
fn eval_refuses_mismatched_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "soc.bin", 20, 1);
    let other = gen(dir.path(), "other.bin", 20, 2);
    let run = train_one_epoch(dir.path(), &data, "cnn-mlp", &dir.path().join("runs"), &[]);
    let ckpt = run.join("best.ckpt");

    let wrong_model = ddlab(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--data", data.to_str().unwrap(), "--model", "dilated-densenet"], dir.path());
    assert!(!wrong_model.status.success());
    assert!(String::from_utf8_lossy(&wrong_model.stderr).contains("manifest mismatch"));

    let wrong_data = ddlab(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--data", other.to_str().unwrap()], dir.path());
    assert!(!wrong_data.status.success());
    assert!(String::from_utf8_lossy(&wrong_data.stderr).contains("sha256"));

    let right = ddlab(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--data", data.to_str().unwrap(), "--model", "cnn-mlp"], dir.path());
    assert!(right.status.success());
}

#[test]
fn seed_matched_runs_write_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "soc.bin", 30, 3);
    let a = train_one_epoch(dir.path(), &data, "cnn-mlp", &dir.path().join("a"), &[]);
    let b = train_one_epoch(dir.path(), &data, "cnn-mlp", &dir.path().join("b"), &[]);
    let read = |p: &Path| std::fs::read(p.join("metrics.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn flags_override_the_config_file_which_overrides_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "soc.bin", 20, 1);
    let config = dir.path().join("train.toml");
    std::fs::write(&config, "epochs = 3\ndropout = 0.3\nlr_max = 0.002\n").unwrap();
    let run = train_one_epoch(
        dir.path(),
        &data,
        "cnn-rn",
        &dir.path().join("runs"),
        &["--config", config.to_str().unwrap(), "--dropout", "0.1"],
    );
    let manifest = RunManifest::load(&run.join("manifest.json")).unwrap();
    let train = &manifest.config["train"];
    assert_eq!(train["epochs"], 1);
    assert_eq!(train["dropout"], 0.1);
    assert_eq!(train["lr_max"], 0.002);
    // CNN kinds train without weight decay unless asked
    assert_eq!(train["weight_decay"], 0.0);
    assert_eq!(manifest.config["model"]["relation"]["f_dropout"], 0.1);
}

#[test]
fn report_renders_good_rows_and_fails_on_bad_ones() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "soc.bin", 20, 1);
    let root = dir.path().join("runs");
    train_one_epoch(dir.path(), &data, "cnn-mlp", &root, &[]);
    let good = root.join("cnn-mlp");
    let missing = dir.path().join("nowhere");
    let csv = dir.path().join("table.csv");

    let single = ok(&["report", good.to_str().unwrap(), "--csv", csv.to_str().unwrap()], dir.path());
    assert!(single.contains("CNN + MLP"), "{}", single);
    assert!(single.contains("± 0.0"), "{}", single);
    let csv_text = std::fs::read_to_string(&csv).unwrap();
    assert!(csv_text.starts_with("model,runs,"), "{}", csv_text);
    assert_eq!(csv_text.lines().count(), 2);

    let partial = ddlab(&["report", good.to_str().unwrap(), missing.to_str().unwrap()], dir.path());
    assert!(!partial.status.success());
    let text = String::from_utf8_lossy(&partial.stdout).to_string() + &String::from_utf8_lossy(&partial.stderr);
    assert!(text.contains("CNN + MLP"), "{}", text);
    assert!(text.contains("nowhere"), "{}", text);
}

#[test]
fn usage_errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    assert!(!ddlab(&["train", "--model", "transformer", "--data", "x.bin"], dir.path()).status.success());
    let missing = ddlab(&["train", "--model", "cnn-mlp", "--data", "does-not-exist.bin"], dir.path());
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("does-not-exist.bin"));
    assert!(!ddlab(&["report"], dir.path()).status.success());
}

#[test]
fn grad_check_subset_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["grad-check", "--instances", "3", "--filter", "relu"], dir.path());
    assert!(out.lines().next().unwrap().starts_with("op"));
    assert!(out.lines().count() >= 2, "{}", out);
    assert!(out.lines().skip(1).all(|l| l.ends_with("ok")), "{}", out);
}
