//! Neural-network layers as differentiable tape operations.

mod batchnorm;
mod conv;
mod dropout;
mod init;
mod loss;
mod pool;

pub use batchnorm::{batch_norm, BatchNormState};
pub use conv::{conv2d, conv2d_forward, Conv2dSpec};
pub use dropout::dropout;
pub use init::{init_params, ParamKind};
pub use loss::{argmax_rows, softmax, softmax_cross_entropy};
pub use pool::{avg_pool2d, global_avg_pool};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

/// Whether layers use batch statistics and stochastic dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

/// `x[n, in] * w[in, out] + b[out]`.
pub fn linear<T: Scalar>(tape: &mut Tape<T>, x: Var, weight: Var, bias: Var) -> Result<Var> {
    let y = tape.matmul(x, weight)?;
    tape.add_bias(y, bias)
}
