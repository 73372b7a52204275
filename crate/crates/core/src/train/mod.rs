//! Optimization recipe, evaluation and the multi-seed experiment runner.

mod optim;
mod report;

pub use optim::{adam_step, cosine_lr, AdamConfig, AdamState};
pub use report::{mean_std, metrics_csv, ColumnStats, ExperimentSummary, METRICS_HEADER};

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{contract_err, Error, Result};
use crate::models::checkpoint::{save_checkpoint, CheckpointMeta};
use crate::models::{build_model, Model, ModelConfig, ModelKind};
use crate::nn::{argmax_rows, softmax_cross_entropy, Mode};
use crate::scalar::Scalar;
use crate::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr_max: f64,
    pub lr_min: f64,
    pub epochs: usize,
    /// Images per mini-batch; every question of each image is included, so
    /// the default of 3 gives 60 question-answer pairs per step.
    pub batch_size: usize,
    pub weight_decay: f64,
    /// Dropout rate applied to every dropout site of the model.
    pub dropout: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn for_kind(kind: ModelKind) -> Self {
        let dense = kind.is_densenet();
        TrainConfig {
            lr_max: 1e-3,
            lr_min: 1e-5,
            epochs: 250,
            batch_size: 3,
            weight_decay: if dense { 4e-5 } else { 0.0 },
            dropout: if dense { 0.2 } else { 0.5 },
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(contract_err!("epochs and batch size must be positive"));
        }
        // negated so that NaN rates are rejected too
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(self.lr_min <= self.lr_max) {
            return Err(contract_err!("lr_min {} exceeds lr_max {}", self.lr_min, self.lr_max));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(contract_err!("dropout rate {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    pub fn lr(&self, epoch: usize) -> Result<f64> {
        cosine_lr(epoch, self.epochs, self.lr_max, self.lr_min)
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }
}

/// Question-answering accuracy in `[0, 1]`, split by family.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Accuracy {
    pub non_relational: f64,
    pub relational: f64,
    pub combined: f64,
}

/// Running counts behind an [`Accuracy`].
#[derive(Debug, Clone, Copy, Default)]
pub struct Tally {
    correct: [usize; 2],
    total: [usize; 2],
}

impl Tally {
    pub fn add(&mut self, relational: bool, correct: bool) {
        let k = relational as usize;
        self.total[k] += 1;
        self.correct[k] += correct as usize;
    }

    pub fn accuracy(&self) -> Accuracy {
        let frac = |c: usize, t: usize| if t == 0 { 0.0 } else { c as f64 / t as f64 };
        Accuracy {
            non_relational: frac(self.correct[0], self.total[0]),
            relational: frac(self.correct[1], self.total[1]),
            combined: frac(self.correct[0] + self.correct[1], self.total[0] + self.total[1]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub mean_loss: f64,
    pub accuracy: f64,
}

/// One pass over `ids` in shuffled mini-batches of images, with one Adam
/// step per batch at the learning rate of `epoch`.
#[allow(clippy::too_many_arguments)]
pub fn train_epoch<T: Scalar>(
    model: &mut Model<T>,
    data: &Dataset,
    ids: &[usize],
    config: &TrainConfig,
    epoch: usize,
    adam: &mut AdamState<T>,
    rng: &mut Rng,
) -> Result<EpochStats> {
    if ids.is_empty() {
        return Err(contract_err!("training split is empty"));
    }
    let lr = config.lr(epoch)?;
    let adam_config = config.adam();
    let mut order = ids.to_vec();
    order.shuffle(rng);
    let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
    for (b, chunk) in order.chunks(config.batch_size).enumerate() {
        let batch = data.batch::<T>(chunk);
        let mut s = model.session(Mode::Train, rng);
        let images = s.tape.constant(batch.images);
        let questions = s.tape.constant(batch.questions);
        let logits = model.forward(&mut s, images, questions, &batch.image_of)?;
        let loss = softmax_cross_entropy(&mut s.tape, logits, &batch.answers)?;
        let value = s.tape.value(loss).item().as_f64();
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: b, lr });
        }
        let predictions = argmax_rows(s.tape.value(logits));
        correct += predictions.iter().zip(&batch.answers).filter(|(p, a)| p == a).count();
        let n = batch.answers.len();
        seen += n;
        loss_sum += value * n as f64;
        let mut grads = s.tape.backward(loss)?;
        let grads: Vec<_> = s.param_vars().iter().map(|&v| grads.take(v)).collect();
        drop(s);
        adam_step(model.params_mut().values_mut(), &grads, adam, lr, &adam_config)?;
    }
    Ok(EpochStats {
        mean_loss: loss_sum / seen as f64,
        accuracy: correct as f64 / seen as f64,
    })
}

/// Accuracy on `ids` with dropout off and batch norm on running statistics.
pub fn evaluate<T: Scalar>(model: &mut Model<T>, data: &Dataset, ids: &[usize], batch_size: usize) -> Result<Accuracy> {
    if ids.is_empty() {
        return Err(contract_err!("evaluation split is empty"));
    }
    let mut tally = Tally::default();
    // eval mode draws nothing from the generator
    let mut rng = Rng::seed_from_u64(0);
    for chunk in ids.chunks(batch_size.max(1)) {
        let batch = data.batch::<T>(chunk);
        let mut s = model.session(Mode::Eval, &mut rng);
        let images = s.tape.constant(batch.images);
        let questions = s.tape.constant(batch.questions);
        let logits = model.forward(&mut s, images, questions, &batch.image_of)?;
        for (k, p) in argmax_rows(s.tape.value(logits)).into_iter().enumerate() {
            tally.add(batch.relational[k], p == batch.answers[k]);
        }
    }
    Ok(tally.accuracy())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val: Accuracy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub kind: ModelKind,
    pub seed: u64,
    pub history: Vec<EpochRecord>,
    /// 1-based epoch whose weights produced `test`.
    pub best_epoch: usize,
    pub best_checkpoint: Option<PathBuf>,
    pub test: Accuracy,
}

impl RunResult {
    /// Name of the JSON copy written into each run directory.
    pub const FILE_NAME: &'static str = "result.json";

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })
    }
}

/// Where a run writes its artifacts.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub dataset_sha256: Option<String>,
}

/// Trains one freshly initialized model, keeping the weights of the epoch with
/// the best combined validation accuracy (earliest on ties), and evaluates
/// those weights on the test split once.
///
/// With an `output`, the run directory receives `metrics.csv` (rewritten every
/// epoch), `best.ckpt`, `final.ckpt` and `result.json`.
pub fn train_run<T: Scalar>(
    model_config: &ModelConfig,
    config: &TrainConfig,
    data: &Dataset,
    output: Option<&RunOutput>,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<RunResult> {
    config.validate()?;
    let model_config = model_config.clone().with_dropout(config.dropout);
    let mut model: Model<T> = build_model(&model_config, config.seed)?;
    let mut adam = AdamState::new(model.params().values());
    let mut rng = Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let (train, val, test) = (&data.splits.train, &data.splits.val, &data.splits.test);
    if let Some(out) = output {
        std::fs::create_dir_all(&out.dir).map_err(|e| Error::io(&out.dir, e))?;
    }
    let meta = |epoch: usize, val: f64| CheckpointMeta {
        config: model_config.clone(),
        seed: config.seed,
        epoch,
        dataset_sha256: output.and_then(|o| o.dataset_sha256.clone()),
        val_combined: Some(val),
    };

    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, Model<T>)> = None;
    for e in 0..config.epochs {
        let stats = train_epoch(&mut model, data, train, config, e, &mut adam, &mut rng)?;
        let val_acc = evaluate(&mut model, data, val, config.batch_size)?;
        let record = EpochRecord {
            epoch: e + 1,
            lr: config.lr(e)?,
            train_loss: stats.mean_loss,
            train_accuracy: stats.accuracy,
            val: val_acc,
        };
        on_epoch(&record);
        history.push(record);
        if best.as_ref().is_none_or(|(_, acc, _)| val_acc.combined > *acc) {
            if let Some(out) = output {
                save_checkpoint(&out.dir.join("best.ckpt"), &model, &meta(e + 1, val_acc.combined))?;
            }
            best = Some((e + 1, val_acc.combined, model.clone()));
        }
        if let Some(out) = output {
            std::fs::write(out.dir.join("metrics.csv"), metrics_csv(&history)).map_err(|e| Error::io(&out.dir, e))?;
        }
    }
    if let Some(out) = output {
        let last = history.last().expect("at least one epoch");
        save_checkpoint(&out.dir.join("final.ckpt"), &model, &meta(last.epoch, last.val.combined))?;
    }
    let (best_epoch, _, mut best_model) = best.expect("at least one epoch");
    let test_acc = evaluate(&mut best_model, data, test, config.batch_size)?;
    let result = RunResult {
        kind: model_config.kind,
        seed: config.seed,
        history,
        best_epoch,
        best_checkpoint: output.map(|o| o.dir.join("best.ckpt")),
        test: test_acc,
    };
    if let Some(out) = output {
        result.save(&out.dir.join(RunResult::FILE_NAME))?;
    }
    Ok(result)
}

/// One run per seed, each in `root/<kind>/seed-<seed>` when `root` is given,
/// then mean and sample standard deviation of the test accuracies.
pub fn run_experiment<T: Scalar>(
    model_config: &ModelConfig,
    config: &TrainConfig,
    data: &Dataset,
    seeds: &[u64],
    root: Option<&Path>,
    dataset_sha256: Option<String>,
    on_epoch: &mut dyn FnMut(u64, &EpochRecord),
) -> Result<ExperimentSummary> {
    if seeds.is_empty() {
        return Err(contract_err!("an experiment needs at least one seed"));
    }
    let runs = seeds
        .iter()
        .map(|&seed| {
            let c = TrainConfig { seed, ..config.clone() };
            let output = root.map(|r| RunOutput {
                dir: r.join(model_config.kind.slug()).join(format!("seed-{}", seed)),
                dataset_sha256: dataset_sha256.clone(),
            });
            train_run::<T>(model_config, &c, data, output.as_ref(), &mut |rec| on_epoch(seed, rec))
                .map_err(|e| Error::Run { seed, source: Box::new(e) })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentSummary::from_runs(model_config.kind, runs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tally_combined_is_pooled() {
        let mut t = Tally::default();
        for k in 0..10 {
            t.add(false, true);
            t.add(true, k < 6);
        }
        let a = t.accuracy();
        assert_eq!((a.non_relational, a.relational, a.combined), (1.0, 0.6, 0.8));
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::for_kind(ModelKind::CnnMlp);
        assert!(c.validate().is_ok());
        c.lr_min = 1.0;
        assert!(c.validate().is_err());
        assert_eq!(TrainConfig::for_kind(ModelKind::DilatedDensenetMlp).weight_decay, 4e-5);
    }
}
