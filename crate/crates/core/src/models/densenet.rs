//! DenseNet stages, transitions and the optional exponential dilation schedule.

use crate::error::Result;
use crate::models::layers::{ConvLayer, NormLayer, NormStore, ParamStore, Session};
use crate::models::DenseNetConfig;
use crate::nn::{self, Conv2dSpec};
use crate::scalar::Scalar;
use crate::tape::Var;
use crate::Rng;

/// Dilation of block `block` in any stage: `2^block` when dilated, else 1.
pub fn dilation_for_block(_stage: usize, block: usize, dilated: bool) -> usize {
    if dilated {
        1 << block
    } else {
        1
    }
}

#[derive(Debug, Clone)]
struct BasicBlock {
    norm: NormLayer,
    conv: ConvLayer,
}

/// A run of basic blocks; block `i` sees the stage input concatenated with the
/// outputs of blocks `0..i` and contributes `growth_rate` channels.
#[derive(Debug, Clone)]
pub struct DenseStage {
    blocks: Vec<BasicBlock>,
    in_channels: usize,
    growth_rate: usize,
    dropout: f64,
}

impl DenseStage {
    pub fn build<T: Scalar>(
        store: &mut ParamStore<T>,
        norms: &mut NormStore<T>,
        in_channels: usize,
        config: &DenseNetConfig,
        stage: usize,
        rng: &mut Rng,
    ) -> Self {
        let blocks = (0..config.blocks_per_stage)
            .map(|i| {
                let channels = in_channels + i * config.growth_rate;
                let name = format!("stage{}.block{}", stage, i);
                let dilation = dilation_for_block(stage, i, config.dilated);
                BasicBlock {
                    norm: NormLayer::new(store, norms, &format!("{}.norm", name), channels, rng),
                    conv: ConvLayer::new(
                        store,
                        &format!("{}.conv", name),
                        Conv2dSpec::same_3x3(channels, config.growth_rate, dilation),
                        rng,
                    ),
                }
            })
            .collect();
        DenseStage {
            blocks,
            in_channels,
            growth_rate: config.growth_rate,
            dropout: config.dropout,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.in_channels + self.blocks.len() * self.growth_rate
    }

    pub fn dilations(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.conv.spec.dilation).collect()
    }

    pub fn conv_specs(&self) -> Vec<Conv2dSpec> {
        self.blocks.iter().map(|b| b.conv.spec).collect()
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, norms: &mut NormStore<T>, x: Var) -> Result<Var> {
        let mut features = vec![x];
        for block in &self.blocks {
            let input = if features.len() == 1 {
                x
            } else {
                s.tape.concat_channels(&features)?
            };
            let h = block.norm.forward(s, norms, input)?;
            let h = s.relu(h);
            let h = block.conv.forward(s, h)?;
            let h = s.dropout(h, self.dropout)?;
            features.push(h);
        }
        if features.len() == 1 {
            Ok(x)
        } else {
            s.tape.concat_channels(&features)
        }
    }
}

/// Pointwise channel compression followed by 2x2 average pooling.
#[derive(Debug, Clone)]
pub struct Transition {
    norm: NormLayer,
    conv: ConvLayer,
    dropout: f64,
}

impl Transition {
    pub fn build<T: Scalar>(
        store: &mut ParamStore<T>,
        norms: &mut NormStore<T>,
        name: &str,
        channels: usize,
        compression: f64,
        dropout: f64,
        rng: &mut Rng,
    ) -> Self {
        let out = Self::output_channels(channels, compression);
        Transition {
            norm: NormLayer::new(store, norms, &format!("{}.norm", name), channels, rng),
            conv: ConvLayer::new(store, &format!("{}.conv", name), Conv2dSpec::pointwise(channels, out), rng),
            dropout,
        }
    }

    /// `floor(compression * channels)`, never below one.
    pub fn output_channels(channels: usize, compression: f64) -> usize {
        ((compression * channels as f64).floor() as usize).max(1)
    }

    pub fn out_channels(&self) -> usize {
        self.conv.spec.out_channels
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, norms: &mut NormStore<T>, x: Var) -> Result<Var> {
        let h = self.norm.forward(s, norms, x)?;
        let h = s.relu(h);
        let h = self.conv.forward(s, h)?;
        let h = s.dropout(h, self.dropout)?;
        nn::avg_pool2d(&mut s.tape, h, 2, 2)
    }
}

/// Stem convolution, dense stages separated by transitions, and a final
/// norm + ReLU. Produces a `[n, c, h, w]` feature map.
#[derive(Debug, Clone)]
pub struct DenseNet {
    stem: ConvLayer,
    stages: Vec<DenseStage>,
    transitions: Vec<Transition>,
    final_norm: NormLayer,
    out_channels: usize,
}

impl DenseNet {
    pub fn build<T: Scalar>(
        store: &mut ParamStore<T>,
        norms: &mut NormStore<T>,
        in_channels: usize,
        config: &DenseNetConfig,
        rng: &mut Rng,
    ) -> Self {
        let stem = ConvLayer::new(
            store,
            "stem",
            Conv2dSpec {
                in_channels,
                out_channels: config.stem_channels,
                kernel: 3,
                stride: config.stem_stride,
                padding: 1,
                dilation: 1,
            },
            rng,
        );
        let mut channels = config.stem_channels;
        let mut stages = Vec::new();
        let mut transitions = Vec::new();
        for j in 0..config.stages {
            let stage = DenseStage::build(store, norms, channels, config, j, rng);
            channels = stage.out_channels();
            stages.push(stage);
            if j + 1 < config.stages {
                let t = Transition::build(
                    store,
                    norms,
                    &format!("transition{}", j),
                    channels,
                    config.compression,
                    config.dropout,
                    rng,
                );
                channels = t.out_channels();
                transitions.push(t);
            }
        }
        let final_norm = NormLayer::new(store, norms, "final.norm", channels, rng);
        DenseNet {
            stem,
            stages,
            transitions,
            final_norm,
            out_channels: channels,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn stages(&self) -> &[DenseStage] {
        &self.stages
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn conv_layer_count(&self) -> usize {
        1 + self.stages.iter().map(|s| s.blocks.len()).sum::<usize>() + self.transitions.len()
    }

    /// Spatial extent of the output for a square input of side `input`.
    pub fn output_extent(&self, input: usize) -> Result<usize> {
        let mut e = self.stem.spec.output_extent(input)?;
        for _ in &self.transitions {
            e /= 2;
        }
        Ok(e)
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, norms: &mut NormStore<T>, x: Var) -> Result<Var> {
        let mut h = self.stem.forward(s, x)?;
        for (j, stage) in self.stages.iter().enumerate() {
            h = stage.forward(s, norms, h)?;
            if let Some(t) = self.transitions.get(j) {
                h = t.forward(s, norms, h)?;
            }
        }
        let h = self.final_norm.forward(s, norms, h)?;
        Ok(s.relu(h))
    }
}
