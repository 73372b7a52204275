//! The four compared architectures and their configuration.

pub mod checkpoint;
pub mod cnn;
pub mod densenet;
pub mod layers;
pub mod relational;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{contract_err, Result};
use crate::nn::Mode;
use crate::scalar::Scalar;
use crate::tape::Var;
use crate::Rng;

pub use cnn::CnnBackbone;
pub use densenet::{dilation_for_block, DenseNet, DenseStage, Transition};
pub use layers::{LinearLayer, NormStore, ParamStore, Session};
pub use relational::{extract_objects, pair_features, RelationModule};

/// The rows of the comparison table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    CnnMlp,
    CnnRn,
    DensenetMlp,
    DilatedDensenetMlp,
}

impl ModelKind {
    /// Table order.
    pub const ALL: [ModelKind; 4] = [
        ModelKind::CnnMlp,
        ModelKind::CnnRn,
        ModelKind::DensenetMlp,
        ModelKind::DilatedDensenetMlp,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ModelKind::CnnMlp => "CNN + MLP",
            ModelKind::CnnRn => "CNN + RN",
            ModelKind::DensenetMlp => "DenseNet + MLP",
            ModelKind::DilatedDensenetMlp => "Dilated DenseNet + MLP",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            ModelKind::CnnMlp => "cnn-mlp",
            ModelKind::CnnRn => "cnn-rn",
            ModelKind::DensenetMlp => "densenet",
            ModelKind::DilatedDensenetMlp => "dilated-densenet",
        }
    }

    pub fn is_densenet(self) -> bool {
        matches!(self, ModelKind::DensenetMlp | ModelKind::DilatedDensenetMlp)
    }

    pub fn table_position(self) -> usize {
        Self::ALL.iter().position(|&k| k == self).expect("listed")
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl FromStr for ModelKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "cnn-mlp" => Ok(ModelKind::CnnMlp),
            "cnn-rn" => Ok(ModelKind::CnnRn),
            "densenet" | "densenet-mlp" => Ok(ModelKind::DensenetMlp),
            "dilated-densenet" | "dilated-densenet-mlp" => Ok(ModelKind::DilatedDensenetMlp),
            other => Err(contract_err!(
                "unknown model kind '{}' (expected cnn-mlp, cnn-rn, densenet or dilated-densenet)",
                other
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnConfig {
    pub layers: usize,
    pub channels: usize,
    pub stride: usize,
}

impl Default for CnnConfig {
    fn default() -> Self {
        CnnConfig {
            layers: 4,
            channels: 24,
            stride: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNetConfig {
    pub stages: usize,
    pub blocks_per_stage: usize,
    pub growth_rate: usize,
    pub compression: f64,
    pub dilated: bool,
    pub stem_channels: usize,
    pub stem_stride: usize,
    pub dropout: f64,
}

impl DenseNetConfig {
    pub fn paper(dilated: bool) -> Self {
        DenseNetConfig {
            stages: 3,
            blocks_per_stage: 4,
            growth_rate: 32,
            compression: 1.0,
            dilated,
            stem_channels: 32,
            stem_stride: 1,
            dropout: 0.2,
        }
    }

    /// Stem, every block, every transition, and the final classifier.
    pub fn layer_count(&self) -> usize {
        1 + self.stages * self.blocks_per_stage + self.stages.saturating_sub(1) + 1
    }

    pub fn stage_dilations(&self, stage: usize) -> Vec<usize> {
        (0..self.blocks_per_stage)
            .map(|i| dilation_for_block(stage, i, self.dilated))
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if self.stages == 0 || self.growth_rate == 0 || self.stem_channels == 0 || self.stem_stride == 0 {
            return Err(contract_err!("degenerate DenseNet config {:?}", self));
        }
        if !(self.compression > 0.0 && self.compression <= 1.0) {
            return Err(contract_err!("compression {} outside (0, 1]", self.compression));
        }
        check_rate(self.dropout)
    }
}

/// How a feature map becomes the vector fed to an MLP head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureReduce {
    GlobalAverage,
    Flatten,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub hidden: usize,
    pub dropout: f64,
    pub features: FeatureReduce,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationNetConfig {
    pub g_hidden: usize,
    pub g_layers: usize,
    pub f_hidden: usize,
    pub f_dropout: f64,
}

impl Default for RelationNetConfig {
    fn default() -> Self {
        RelationNetConfig {
            g_hidden: 256,
            g_layers: 4,
            f_hidden: 256,
            f_dropout: 0.5,
        }
    }
}

impl RelationNetConfig {
    /// Object vector width: backbone channels plus two coordinates.
    pub fn object_dim(cnn_channels: usize) -> usize {
        cnn_channels + 2
    }

    pub fn pair_dim(cnn_channels: usize, question_dim: usize) -> usize {
        2 * Self::object_dim(cnn_channels) + question_dim
    }
}

/// Complete architecture description; only the sections relevant to `kind`
/// are used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub image_size: usize,
    pub image_channels: usize,
    pub question_dim: usize,
    pub classes: usize,
    pub cnn: CnnConfig,
    pub densenet: DenseNetConfig,
    pub head: HeadConfig,
    pub relation: RelationNetConfig,
}

impl ModelConfig {
    /// Full-size defaults for a 75x75 Sort-of-CLEVR model.
    pub fn for_kind(kind: ModelKind) -> Self {
        let dense = kind.is_densenet();
        ModelConfig {
            kind,
            image_size: 75,
            image_channels: 3,
            question_dim: 11,
            classes: 10,
            cnn: CnnConfig::default(),
            densenet: DenseNetConfig::paper(kind == ModelKind::DilatedDensenetMlp),
            head: HeadConfig {
                hidden: 256,
                dropout: if dense { 0.2 } else { 0.5 },
                features: if dense {
                    FeatureReduce::GlobalAverage
                } else {
                    FeatureReduce::Flatten
                },
            },
            relation: RelationNetConfig::default(),
        }
    }

    /// A structurally identical but tiny variant for numerical checks.
    pub fn small(kind: ModelKind, image_size: usize) -> Self {
        let mut c = Self::for_kind(kind);
        c.image_size = image_size;
        c.cnn = CnnConfig {
            layers: 2,
            channels: 3,
            stride: 2,
        };
        c.densenet = DenseNetConfig {
            stages: 2,
            blocks_per_stage: 2,
            growth_rate: 2,
            compression: 1.0,
            dilated: kind == ModelKind::DilatedDensenetMlp,
            stem_channels: 3,
            stem_stride: 1,
            dropout: 0.0,
        };
        c.head.hidden = 5;
        c.head.dropout = 0.0;
        c.relation = RelationNetConfig {
            g_hidden: 4,
            g_layers: 2,
            f_hidden: 4,
            f_dropout: 0.0,
        };
        c
    }

    /// Copy with every dropout rate replaced.
    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.head.dropout = rate;
        self.densenet.dropout = rate;
        self.relation.f_dropout = rate;
        self
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if (0.0..1.0).contains(&rate) {
        Ok(())
    } else {
        Err(contract_err!("dropout rate {} outside [0, 1)", rate))
    }
}

#[derive(Debug, Clone)]
enum Backbone {
    Cnn(CnnBackbone),
    DenseNet(DenseNet),
}

#[derive(Debug, Clone)]
enum Network {
    Mlp {
        backbone: Backbone,
        reduce: FeatureReduce,
        hidden: LinearLayer,
        out: LinearLayer,
        dropout: f64,
    },
    Relational {
        backbone: CnnBackbone,
        module: RelationModule,
    },
}

/// A built network: architecture, trainable parameters and batch-norm state.
#[derive(Debug, Clone)]
pub struct Model<T> {
    config: ModelConfig,
    params: ParamStore<T>,
    norms: NormStore<T>,
    net: Network,
}

/// Builds a freshly initialized model; `seed` fixes every initial weight.
pub fn build_model<T: Scalar>(config: &ModelConfig, seed: u64) -> Result<Model<T>> {
    let mut rng = Rng::seed_from_u64(seed);
    let mut params = ParamStore::default();
    let mut norms = NormStore::default();
    check_rate(config.head.dropout)?;
    check_rate(config.relation.f_dropout)?;
    let c_in = config.image_channels;
    let net = match config.kind {
        ModelKind::CnnMlp | ModelKind::DensenetMlp | ModelKind::DilatedDensenetMlp => {
            let (backbone, channels, extent) = if config.kind == ModelKind::CnnMlp {
                let b = CnnBackbone::build(&mut params, &mut norms, c_in, &config.cnn, &mut rng);
                let (c, e) = (b.out_channels(), b.output_extent(config.image_size)?);
                (Backbone::Cnn(b), c, e)
            } else {
                config.densenet.validate()?;
                let b = DenseNet::build(&mut params, &mut norms, c_in, &config.densenet, &mut rng);
                let (c, e) = (b.out_channels(), b.output_extent(config.image_size)?);
                (Backbone::DenseNet(b), c, e)
            };
            if extent == 0 {
                return Err(contract_err!("image size {} collapses the feature map", config.image_size));
            }
            let features = match config.head.features {
                FeatureReduce::GlobalAverage => channels,
                FeatureReduce::Flatten => channels * extent * extent,
            };
            let hidden = LinearLayer::new(
                &mut params,
                "head.hidden",
                features + config.question_dim,
                config.head.hidden,
                &mut rng,
            );
            let out = LinearLayer::output(&mut params, "head.out", config.head.hidden, config.classes, &mut rng);
            Network::Mlp {
                backbone,
                reduce: config.head.features,
                hidden,
                out,
                dropout: config.head.dropout,
            }
        }
        ModelKind::CnnRn => {
            let backbone = CnnBackbone::build(&mut params, &mut norms, c_in, &config.cnn, &mut rng);
            backbone.output_extent(config.image_size)?;
            let module = RelationModule::build(
                &mut params,
                RelationNetConfig::object_dim(backbone.out_channels()),
                &config.relation,
                config.question_dim,
                config.classes,
                &mut rng,
            );
            Network::Relational { backbone, module }
        }
    };
    Ok(Model {
        config: config.clone(),
        params,
        norms,
        net,
    })
}

impl<T: Scalar> Model<T> {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn norms(&self) -> &NormStore<T> {
        &self.norms
    }

    pub fn norms_mut(&mut self) -> &mut NormStore<T> {
        &mut self.norms
    }

    pub fn session<'r>(&self, mode: Mode, rng: &'r mut Rng) -> Session<'r, T> {
        Session::new(&self.params, mode, rng)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    pub fn densenet(&self) -> Option<&DenseNet> {
        match &self.net {
            Network::Mlp {
                backbone: Backbone::DenseNet(d),
                ..
            } => Some(d),
            _ => None,
        }
    }

    pub fn conv_layer_count(&self) -> usize {
        match &self.net {
            Network::Mlp { backbone, .. } => match backbone {
                Backbone::Cnn(c) => c.conv_layer_count(),
                Backbone::DenseNet(d) => d.conv_layer_count(),
            },
            Network::Relational { backbone, .. } => backbone.conv_layer_count(),
        }
    }

    pub fn linear_layer_count(&self) -> usize {
        match &self.net {
            Network::Mlp { .. } => 2,
            Network::Relational { module, .. } => module.linear_layer_count(),
        }
    }

    /// Logits `[q, classes]` for `images [b, c, h, w]` and `questions [q, d]`,
    /// where question `k` is about image `image_of[k]`.
    pub fn forward(&mut self, s: &mut Session<'_, T>, images: Var, questions: Var, image_of: &[usize]) -> Result<Var> {
        let qs = s.tape.shape(questions).to_vec();
        if qs.len() != 2 || qs[0] != image_of.len() || qs[1] != self.config.question_dim {
            return Err(contract_err!(
                "questions {:?} for {} image references (question width {})",
                qs,
                image_of.len(),
                self.config.question_dim
            ));
        }
        let norms = &mut self.norms;
        match &self.net {
            Network::Mlp {
                backbone,
                reduce,
                hidden,
                out,
                dropout,
            } => {
                let fmap = match backbone {
                    Backbone::Cnn(b) => b.forward(s, norms, images)?,
                    Backbone::DenseNet(d) => d.forward(s, norms, images)?,
                };
                let features = match reduce {
                    FeatureReduce::GlobalAverage => crate::nn::global_avg_pool(&mut s.tape, fmap)?,
                    FeatureReduce::Flatten => {
                        let shape = s.tape.shape(fmap).to_vec();
                        s.tape.reshape(fmap, &[shape[0], shape[1..].iter().product()])?
                    }
                };
                let per_question = s.tape.gather_rows(features, image_of)?;
                let joined = s.tape.concat(&[per_question, questions], 1)?;
                let h = hidden.forward(s, joined)?;
                let h = s.relu(h);
                let h = s.dropout(h, *dropout)?;
                out.forward(s, h)
            }
            Network::Relational { backbone, module } => {
                let fmap = backbone.forward(s, norms, images)?;
                let objects = extract_objects(&mut s.tape, fmap)?;
                let per_question = s.tape.gather_rows(objects, image_of)?;
                module.forward(s, per_question, questions)
            }
        }
    }
}
