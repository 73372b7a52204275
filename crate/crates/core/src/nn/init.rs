use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// What a freshly initialized parameter is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    /// `[out, in, k, k]`, fan-in `in*k*k`.
    ConvWeight,
    /// `[in, out]`, fan-in `in`.
    LinearWeight,
    /// `[in, out]` weights of a final classifier, initialized to zero so an
    /// untrained model predicts the uniform distribution.
    OutputWeight,
    Bias,
    /// Batch-norm scale, initialized to one.
    NormScale,
    /// Batch-norm shift, initialized to zero.
    NormShift,
}

impl ParamKind {
    pub fn fan_in(self, shape: &[usize]) -> usize {
        match self {
            ParamKind::ConvWeight => shape[1..].iter().product(),
            ParamKind::LinearWeight | ParamKind::OutputWeight => shape[0],
            _ => 1,
        }
    }
}

/// He initialization: weights are normal with std `sqrt(2/fan_in)`, biases,
/// shifts and classifier weights zero, scales one.
pub fn init_params<T: Scalar, R: Rng + ?Sized>(kind: ParamKind, shape: &[usize], rng: &mut R) -> Tensor<T> {
    match kind {
        ParamKind::ConvWeight | ParamKind::LinearWeight => {
            let std = (2.0 / kind.fan_in(shape) as f64).sqrt();
            Tensor::from_fn(shape, |_| T::of(rng.sample::<f64, _>(StandardNormal) * std))
        }
        ParamKind::Bias | ParamKind::NormShift | ParamKind::OutputWeight => Tensor::zeros(shape),
        ParamKind::NormScale => Tensor::ones(shape),
    }
}
