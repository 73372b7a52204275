//! Training settings: built-in per-model defaults, then an optional TOML
//! file, then command-line flags.

use std::path::Path;

use ddlab::models::ModelKind;
use ddlab::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Every training setting that a config file or a flag may override.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOverrides {
    pub lr_max: Option<f64>,
    pub lr_min: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub weight_decay: Option<f64>,
    pub dropout: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub adam_eps: Option<f64>,
    pub seeds: Option<Vec<u64>>,
}

impl TrainOverrides {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            source: e,
        })
    }

    /// `self` with every field set in `over` replaced.
    pub fn then(self, over: TrainOverrides) -> Self {
        TrainOverrides {
            lr_max: over.lr_max.or(self.lr_max),
            lr_min: over.lr_min.or(self.lr_min),
            epochs: over.epochs.or(self.epochs),
            batch_size: over.batch_size.or(self.batch_size),
            weight_decay: over.weight_decay.or(self.weight_decay),
            dropout: over.dropout.or(self.dropout),
            beta1: over.beta1.or(self.beta1),
            beta2: over.beta2.or(self.beta2),
            adam_eps: over.adam_eps.or(self.adam_eps),
            seeds: over.seeds.or(self.seeds),
        }
    }

    /// The per-model defaults with these overrides applied. The seed field is
    /// left at its default; each run sets its own.
    pub fn resolve(&self, kind: ModelKind) -> TrainConfig {
        let d = TrainConfig::for_kind(kind);
        TrainConfig {
            lr_max: self.lr_max.unwrap_or(d.lr_max),
            lr_min: self.lr_min.unwrap_or(d.lr_min),
            epochs: self.epochs.unwrap_or(d.epochs),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            weight_decay: self.weight_decay.unwrap_or(d.weight_decay),
            dropout: self.dropout.unwrap_or(d.dropout),
            beta1: self.beta1.unwrap_or(d.beta1),
            beta2: self.beta2.unwrap_or(d.beta2),
            adam_eps: self.adam_eps.unwrap_or(d.adam_eps),
            seed: d.seed,
        }
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.seeds.clone().unwrap_or_else(|| vec![1])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_defaults_file_flags() {
        let file: TrainOverrides = toml::from_str("epochs = 10\nweight_decay = 1e-4\nseeds = [4, 5]").unwrap();
        let flags = TrainOverrides {
            epochs: Some(3),
            ..TrainOverrides::default()
        };
        let merged = TrainOverrides::default().then(file).then(flags);
        let c = merged.resolve(ModelKind::CnnRn);
        assert_eq!(c.epochs, 3);
        assert_eq!(c.weight_decay, 1e-4);
        assert_eq!(c.dropout, 0.5);
        assert_eq!(c.lr_max, 1e-3);
        assert_eq!(merged.seeds(), vec![4, 5]);
    }

    #[test]
    fn per_model_defaults() {
        let none = TrainOverrides::default();
        assert_eq!(none.resolve(ModelKind::CnnRn).weight_decay, 0.0);
        assert_eq!(none.resolve(ModelKind::DensenetMlp).weight_decay, 4e-5);
        assert_eq!(none.resolve(ModelKind::DilatedDensenetMlp).dropout, 0.2);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<TrainOverrides>("learning_rate = 0.1").is_err());
    }
}
