//! Parameter storage and the stateful layer wrappers shared by all models.

use crate::error::{contract_err, Result};
use crate::nn::{self, init_params, BatchNormState, Conv2dSpec, Mode, ParamKind};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

/// Named trainable tensors, in creation order.
#[derive(Debug, Clone)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore {
            names: Vec::new(),
            values: Vec::new(),
        }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn add(&mut self, name: String, kind: ParamKind, shape: &[usize], rng: &mut Rng) -> ParamId {
        self.names.push(name);
        self.values.push(init_params(kind, shape, rng));
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.values
    }

    /// Total number of scalar weights.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NormId(usize);

/// Running statistics of every batch-norm layer, with names for checkpoints.
#[derive(Debug, Clone)]
pub struct NormStore<T> {
    names: Vec<String>,
    states: Vec<BatchNormState<T>>,
}

impl<T: Scalar> Default for NormStore<T> {
    fn default() -> Self {
        NormStore {
            names: Vec::new(),
            states: Vec::new(),
        }
    }
}

impl<T: Scalar> NormStore<T> {
    fn add(&mut self, name: String, channels: usize) -> NormId {
        self.names.push(name);
        self.states.push(BatchNormState::new(channels));
        NormId(self.states.len() - 1)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn states(&self) -> &[BatchNormState<T>] {
        &self.states
    }

    pub fn states_mut(&mut self) -> &mut [BatchNormState<T>] {
        &mut self.states
    }
}

/// Everything layers need during one forward pass.
///
/// In train mode parameters enter the tape as tracked variables; in eval mode
/// they are constants so no backward rules are kept.
pub struct Session<'r, T> {
    pub tape: Tape<T>,
    params: Vec<Var>,
    mode: Mode,
    rng: &'r mut Rng,
}

impl<'r, T: Scalar> Session<'r, T> {
    pub fn new(params: &ParamStore<T>, mode: Mode, rng: &'r mut Rng) -> Self {
        let mut tape = Tape::new();
        let params = params
            .values()
            .iter()
            .map(|v| match mode {
                Mode::Train => tape.variable(v.clone()),
                Mode::Eval => tape.constant(v.clone()),
            })
            .collect();
        Session { tape, params, mode, rng }
    }

    /// Like [`Session::new`] but with tracked parameters in either mode.
    pub fn tracked(params: &ParamStore<T>, mode: Mode, rng: &'r mut Rng) -> Self {
        let mut s = Session::new(params, Mode::Train, rng);
        s.mode = mode;
        s
    }

    /// Wraps an existing tape whose `params` already hold the parameter values
    /// in store order.
    pub fn from_parts(tape: Tape<T>, params: Vec<Var>, mode: Mode, rng: &'r mut Rng) -> Self {
        Session { tape, params, mode, rng }
    }

    pub fn into_tape(self) -> Tape<T> {
        self.tape
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn param(&self, id: ParamId) -> Var {
        self.params[id.0]
    }

    pub fn param_vars(&self) -> &[Var] {
        &self.params
    }

    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var> {
        nn::dropout(&mut self.tape, x, rate, self.mode, self.rng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.tape.relu(x)
    }
}

#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub spec: Conv2dSpec,
    weight: ParamId,
    bias: ParamId,
}

impl ConvLayer {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, spec: Conv2dSpec, rng: &mut Rng) -> Self {
        let weight = store.add(format!("{}.weight", name), ParamKind::ConvWeight, &spec.weight_shape(), rng);
        let bias = store.add(format!("{}.bias", name), ParamKind::Bias, &[spec.out_channels], rng);
        ConvLayer { spec, weight, bias }
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let (w, b) = (s.param(self.weight), s.param(self.bias));
        nn::conv2d(&mut s.tape, x, w, b, &self.spec)
    }
}

#[derive(Debug, Clone)]
pub struct NormLayer {
    gamma: ParamId,
    beta: ParamId,
    stats: NormId,
}

impl NormLayer {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, norms: &mut NormStore<T>, name: &str, channels: usize, rng: &mut Rng) -> Self {
        let gamma = store.add(format!("{}.gamma", name), ParamKind::NormScale, &[channels], rng);
        let beta = store.add(format!("{}.beta", name), ParamKind::NormShift, &[channels], rng);
        let stats = norms.add(name.to_string(), channels);
        NormLayer { gamma, beta, stats }
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, norms: &mut NormStore<T>, x: Var) -> Result<Var> {
        let (g, b) = (s.param(self.gamma), s.param(self.beta));
        let mode = s.mode();
        nn::batch_norm(&mut s.tape, x, g, b, &mut norms.states[self.stats.0], mode)
    }
}

#[derive(Debug, Clone)]
pub struct LinearLayer {
    pub inputs: usize,
    pub outputs: usize,
    weight: ParamId,
    bias: ParamId,
}

impl LinearLayer {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        let weight = store.add(format!("{}.weight", name), ParamKind::LinearWeight, &[inputs, outputs], rng);
        let bias = store.add(format!("{}.bias", name), ParamKind::Bias, &[outputs], rng);
        LinearLayer {
            inputs,
            outputs,
            weight,
            bias,
        }
    }

    /// A final classifier layer: zero weights and bias.
    pub fn output<T: Scalar>(store: &mut ParamStore<T>, name: &str, inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        let weight = store.add(format!("{}.weight", name), ParamKind::OutputWeight, &[inputs, outputs], rng);
        let bias = store.add(format!("{}.bias", name), ParamKind::Bias, &[outputs], rng);
        LinearLayer {
            inputs,
            outputs,
            weight,
            bias,
        }
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let (w, b) = (s.param(self.weight), s.param(self.bias));
        nn::linear(&mut s.tape, x, w, b)
    }
}

/// Copies `values` into `store`, checking names and shapes.
pub(crate) fn assign_params<T: Scalar>(store: &mut ParamStore<T>, named: Vec<(String, Tensor<T>)>) -> Result<()> {
    if named.len() != store.len() {
        return Err(contract_err!("expected {} parameters, got {}", store.len(), named.len()));
    }
    for (k, (name, value)) in named.into_iter().enumerate() {
        if name != store.names[k] || value.shape() != store.values[k].shape() {
            return Err(contract_err!(
                "parameter {} is {} {:?}, expected {} {:?}",
                k,
                name,
                value.shape(),
                store.names[k],
                store.values[k].shape()
            ));
        }
        store.values[k] = value;
    }
    Ok(())
}
