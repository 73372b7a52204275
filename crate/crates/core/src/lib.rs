//! Dilated DenseNets versus relation networks on Sort-of-CLEVR.
//!
//! The crate bundles a small reverse-mode autodiff engine ([`tape`]), the
//! layers needed by the experiment ([`nn`]), the four compared architectures
//! ([`models`]), a deterministic Sort-of-CLEVR synthesizer ([`dataset`]), the
//! training recipe ([`train`]) and independent numerical oracles ([`verify`]).
//!
//! Everything numeric is generic over [`Scalar`]; training runs in `f32` and
//! gradient checks run in `f64`.

pub mod dataset;
pub mod error;
pub mod models;
pub mod nn;
pub mod scalar;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::{DType, Scalar};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

/// Deterministic generator used for every seeded draw in the crate.
pub type Rng = rand_chacha::ChaCha8Rng;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Tape32 = Tape<f32>;
pub type Tape64 = Tape<f64>;
pub type Model32 = models::Model<f32>;
pub type Model64 = models::Model<f64>;
