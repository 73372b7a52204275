use crate::error::Result;
use crate::models::layers::{ConvLayer, NormLayer, NormStore, ParamStore, Session};
use crate::models::CnnConfig;
use crate::nn::Conv2dSpec;
use crate::scalar::Scalar;
use crate::tape::Var;
use crate::Rng;

/// Plain stack of strided conv + batch norm + ReLU layers.
#[derive(Debug, Clone)]
pub struct CnnBackbone {
    layers: Vec<(ConvLayer, NormLayer)>,
}

impl CnnBackbone {
    pub fn build<T: Scalar>(
        store: &mut ParamStore<T>,
        norms: &mut NormStore<T>,
        in_channels: usize,
        config: &CnnConfig,
        rng: &mut Rng,
    ) -> Self {
        let layers = (0..config.layers)
            .map(|i| {
                let spec = Conv2dSpec {
                    in_channels: if i == 0 { in_channels } else { config.channels },
                    out_channels: config.channels,
                    kernel: 3,
                    stride: config.stride,
                    padding: 1,
                    dilation: 1,
                };
                let name = format!("cnn{}", i);
                (
                    ConvLayer::new(store, &format!("{}.conv", name), spec, rng),
                    NormLayer::new(store, norms, &format!("{}.norm", name), config.channels, rng),
                )
            })
            .collect();
        CnnBackbone { layers }
    }

    pub fn out_channels(&self) -> usize {
        self.layers.last().map_or(0, |(c, _)| c.spec.out_channels)
    }

    pub fn conv_layer_count(&self) -> usize {
        self.layers.len()
    }

    /// Spatial extent of the output grid for a square input of side `input`.
    pub fn output_extent(&self, input: usize) -> Result<usize> {
        self.layers
            .iter()
            .try_fold(input, |e, (conv, _)| conv.spec.output_extent(e))
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, norms: &mut NormStore<T>, x: Var) -> Result<Var> {
        let mut h = x;
        for (conv, norm) in &self.layers {
            h = conv.forward(s, h)?;
            h = norm.forward(s, norms, h)?;
            h = s.relu(h);
        }
        Ok(h)
    }
}
