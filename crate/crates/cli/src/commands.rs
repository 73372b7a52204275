//! One function per subcommand.

use std::path::{Path, PathBuf};

use ddlab::dataset::{build_dataset, load_dataset, save_dataset, Dataset, DatasetConfig, Split};
use ddlab::models::checkpoint::load_checkpoint;
use ddlab::models::{ModelConfig, ModelKind};
use ddlab::train::{evaluate, run_experiment, Accuracy, ExperimentSummary, RunResult, TrainConfig};
use ddlab::verify::{run_all, GradCheckReport};
use ddlab::Model32;
use serde_json::json;

use crate::config::TrainOverrides;
use crate::error::{CliError, Result};
use crate::manifest::{sha256_file, RunManifest};
use crate::{EvalArgs, GenDataArgs, GradCheckArgs, ReportArgs, TrainArgs};

/// Manifest written next to a dataset file.
pub fn dataset_manifest_path(data: &Path) -> PathBuf {
    let mut name = data.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    data.with_file_name(name)
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e)),
        _ => Ok(()),
    }
}

pub fn gen_data(args: &GenDataArgs, artifacts: &Path) -> Result<()> {
    let out = args.out.clone().unwrap_or_else(|| {
        artifacts
            .join("data")
            .join(format!("soc-{}-{}.bin", args.images, args.seed))
    });
    let config = DatasetConfig {
        questions_per_family: args.questions_per_family,
        ..DatasetConfig::new(args.images, args.seed)
    };
    let manifest = RunManifest::new(json!({ "dataset": config, "out": out }), None, vec![args.seed]);
    let data = build_dataset(&config)?;
    create_parent(&out)?;
    save_dataset(&out, &data)?;
    let sha = sha256_file(&out)?;
    RunManifest {
        dataset_sha256: Some(sha.clone()),
        ..manifest
    }
    .finish(&dataset_manifest_path(&out))?;
    println!(
        "{}: {} images, {} QA records (train {} / val {} / test {} images), sha256 {}",
        out.display(),
        data.images.len(),
        data.qa_count(),
        data.splits.train.len(),
        data.splits.val.len(),
        data.splits.test.len(),
        sha
    );
    Ok(())
}

/// Model settings for `kind` sized to the dataset's images.
pub fn model_config_for(kind: ModelKind, data: &Dataset) -> ModelConfig {
    ModelConfig {
        image_size: data.canvas(),
        ..ModelConfig::for_kind(kind)
    }
}

fn resolve_train(args: &TrainArgs) -> Result<(TrainConfig, Vec<u64>)> {
    let file = match &args.config {
        Some(p) => TrainOverrides::load(p)?,
        None => TrainOverrides::default(),
    };
    let flags = TrainOverrides {
        lr_max: args.lr_max,
        lr_min: args.lr_min,
        epochs: args.epochs,
        batch_size: args.batch_size,
        weight_decay: args.weight_decay,
        dropout: args.dropout,
        beta1: args.beta1,
        beta2: args.beta2,
        adam_eps: args.adam_eps,
        seeds: args.seeds.clone(),
    };
    let merged = TrainOverrides::default().then(file).then(flags);
    let config = merged.resolve(args.model);
    config.validate()?;
    let seeds = merged.seeds();
    if seeds.is_empty() {
        return Err(CliError::Usage("at least one seed is required".into()));
    }
    Ok((config, seeds))
}

/// Runs every seed and writes `<out>/<model>/{manifest.json,summary.txt,summary.csv}`
/// plus one directory per seed.
pub fn train(args: &TrainArgs, artifacts: &Path) -> Result<ExperimentSummary> {
    let (config, seeds) = resolve_train(args)?;
    let sha = sha256_file(&args.data)?;
    let data = load_dataset(&args.data)?;
    let model_config = model_config_for(args.model, &data).with_dropout(config.dropout);
    let root = args.out.clone().unwrap_or_else(|| artifacts.join("runs"));
    let exp_dir = root.join(args.model.slug());
    let snapshot = |seeds: &[u64]| {
        json!({
            "model": model_config,
            "train": config,
            "seeds": seeds,
            "dataset": args.data,
            "out": root,
        })
    };
    let experiment = RunManifest::new(snapshot(&seeds), Some(sha.clone()), seeds.clone());
    let started = experiment.started;
    let quiet = args.quiet;
    let summary = run_experiment::<f32>(
        &model_config,
        &config,
        &data,
        &seeds,
        Some(&root),
        Some(sha.clone()),
        &mut |seed, r| {
            if !quiet {
                eprintln!(
                    "{} seed {} epoch {}/{} lr {:.3e} loss {:.4} train {:.2}% val nonrel {:.2}% rel {:.2}% combined {:.2}%",
                    args.model.slug(),
                    seed,
                    r.epoch,
                    config.epochs,
                    r.lr,
                    r.train_loss,
                    100.0 * r.train_accuracy,
                    100.0 * r.val.non_relational,
                    100.0 * r.val.relational,
                    100.0 * r.val.combined
                );
            }
        },
    )?;
    for run in &summary.runs {
        let dir = exp_dir.join(format!("seed-{}", run.seed));
        let mut m = RunManifest::new(snapshot(&[run.seed]), Some(sha.clone()), vec![run.seed]);
        m.started = started;
        m.finish(&dir.join(RunManifest::FILE_NAME))?;
    }
    experiment.finish(&exp_dir.join(RunManifest::FILE_NAME))?;
    let table = ExperimentSummary::table(std::slice::from_ref(&summary));
    let write = |name: &str, text: String| {
        let p = exp_dir.join(name);
        std::fs::write(&p, text).map_err(|e| CliError::io(&p, e))
    };
    write("summary.txt", table.clone())?;
    write("summary.csv", ExperimentSummary::csv(std::slice::from_ref(&summary)))?;
    print!("{}", table);
    Ok(summary)
}

/// Accuracy of a checkpoint on one split, refusing checkpoints that were
/// trained on another dataset or hold a different architecture.
pub fn eval(args: &EvalArgs) -> Result<Accuracy> {
    let (meta, mut model): (_, Model32) = load_checkpoint(&args.checkpoint)?;
    if let Some(kind) = args.model {
        if kind != meta.config.kind {
            return Err(CliError::Mismatch(format!(
                "{} holds a {} model, not {}",
                args.checkpoint.display(),
                meta.config.kind,
                kind
            )));
        }
    }
    let sha = sha256_file(&args.data)?;
    if let Some(expected) = &meta.dataset_sha256 {
        if *expected != sha {
            return Err(CliError::Mismatch(format!(
                "{} was trained on dataset sha256 {}, but {} has {}",
                args.checkpoint.display(),
                expected,
                args.data.display(),
                sha
            )));
        }
    }
    let data = load_dataset(&args.data)?;
    if data.canvas() != meta.config.image_size {
        return Err(CliError::Mismatch(format!(
            "checkpoint expects {}px images, dataset has {}px",
            meta.config.image_size,
            data.canvas()
        )));
    }
    let split = Split::from(args.split);
    let acc = evaluate(&mut model, &data, data.splits.get(split), args.batch_size)?;
    println!(
        "{:?} ({} images): non-relational {:.2}%  relational {:.2}%  combined {:.2}%",
        split,
        data.splits.get(split).len(),
        100.0 * acc.non_relational,
        100.0 * acc.relational,
        100.0 * acc.combined
    );
    Ok(acc)
}

/// Finished runs under `dir`: the directory itself if it holds a run,
/// otherwise its `seed-*` subdirectories.
pub fn collect_runs(dir: &Path) -> Result<Vec<RunResult>> {
    let run_dirs = if dir.join(RunResult::FILE_NAME).exists() || dir.join("metrics.csv").exists() {
        vec![dir.to_path_buf()]
    } else {
        let mut dirs: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| CliError::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir() && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("seed-")))
            .collect();
        dirs.sort();
        dirs
    };
    if run_dirs.is_empty() {
        return Err(CliError::Usage(format!("{} contains no runs", dir.display())));
    }
    let mut runs = Vec::with_capacity(run_dirs.len());
    for d in run_dirs {
        let metrics = d.join("metrics.csv");
        if !metrics.is_file() {
            return Err(CliError::io(
                metrics,
                std::io::Error::new(std::io::ErrorKind::NotFound, "metrics file missing"),
            ));
        }
        runs.push(RunResult::load(&d.join(RunResult::FILE_NAME))?);
    }
    let kind = runs[0].kind;
    if let Some(other) = runs.iter().find(|r| r.kind != kind) {
        return Err(CliError::Mismatch(format!(
            "{} mixes {} and {} runs",
            dir.display(),
            kind,
            other.kind
        )));
    }
    Ok(runs)
}

/// Table text and CSV for `dirs`; unreadable directories become error lines.
pub fn render_report(dirs: &[PathBuf]) -> (String, String, usize) {
    let mut summaries = Vec::new();
    let mut errors = Vec::new();
    for dir in dirs {
        match collect_runs(dir) {
            Ok(runs) => summaries.push(ExperimentSummary::from_runs(runs[0].kind, runs)),
            Err(e) => errors.push(format!("{}: error: {}", dir.display(), e)),
        }
    }
    let mut table = ExperimentSummary::table(&summaries);
    for e in &errors {
        table.push_str(e);
        table.push('\n');
    }
    (table, ExperimentSummary::csv(&summaries), errors.len())
}

pub fn report(args: &ReportArgs) -> Result<()> {
    let (table, csv, failed) = render_report(&args.dirs);
    print!("{}", table);
    if let Some(p) = &args.csv {
        create_parent(p)?;
        std::fs::write(p, csv).map_err(|e| CliError::io(p, e))?;
    }
    if failed > 0 {
        return Err(CliError::Report {
            failed,
            total: args.dirs.len(),
        });
    }
    Ok(())
}

pub fn grad_check(args: &GradCheckArgs) -> Result<()> {
    let reports = run_all(args.instances, args.seed, args.filter.as_deref())?;
    println!("{}", GradCheckReport::header());
    for r in &reports {
        println!("{}", r);
    }
    let failed = reports.iter().filter(|r| !r.passed()).count();
    if failed > 0 {
        return Err(CliError::GradCheck {
            failed,
            total: reports.len(),
        });
    }
    Ok(())
}
