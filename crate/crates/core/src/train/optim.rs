use crate::error::{contract_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `lr_min + (lr_max - lr_min)(1 + cos(pi t / epochs)) / 2` for `0 <= t <= epochs`.
pub fn cosine_lr(t: usize, epochs: usize, lr_max: f64, lr_min: f64) -> Result<f64> {
    if epochs == 0 || t > epochs {
        return Err(contract_err!("epoch {} outside 0..={}", t, epochs));
    }
    // exact endpoints; the formula can be off by an ulp there
    if t == 0 {
        return Ok(lr_max);
    }
    if t == epochs {
        return Ok(lr_min);
    }
    let phase = std::f64::consts::PI * t as f64 / epochs as f64;
    Ok(lr_min + 0.5 * (lr_max - lr_min) * (1.0 + phase.cos()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 coefficient added to the gradient before the moment updates.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First and second moments for every parameter, plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[Tensor<T>]) -> Self {
        AdamState {
            m: params.iter().map(Tensor::zeros_like).collect(),
            v: params.iter().map(Tensor::zeros_like).collect(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update of every parameter. A `None` gradient is
/// treated as zero.
pub fn adam_step<T: Scalar>(
    params: &mut [Tensor<T>],
    grads: &[Option<Tensor<T>>],
    state: &mut AdamState<T>,
    lr: f64,
    config: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(contract_err!(
            "{} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        ));
    }
    for (k, (p, g)) in params.iter().zip(grads).enumerate() {
        if let Some(g) = g {
            if g.shape() != p.shape() {
                return Err(contract_err!("gradient {:?} for parameter {} of shape {:?}", g.shape(), k, p.shape()));
            }
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::of(config.beta1), T::of(config.beta2));
    let (one, wd, eps) = (T::one(), T::of(config.weight_decay), T::of(config.eps));
    let c1 = T::of(1.0 / (1.0 - config.beta1.powi(t)));
    let c2 = T::of(1.0 / (1.0 - config.beta2.powi(t)));
    let lr = T::of(lr);
    for (k, p) in params.iter_mut().enumerate() {
        let g = grads[k].as_ref().map(|g| g.data());
        let (m, v) = (state.m[k].data_mut(), state.v[k].data_mut());
        for (i, w) in p.data_mut().iter_mut().enumerate() {
            let gi = g.map_or(T::zero(), |g| g[i]) + wd * *w;
            m[i] = b1 * m[i] + (one - b1) * gi;
            v[i] = b2 * v[i] + (one - b2) * gi * gi;
            let m_hat = m[i] * c1;
            let v_hat = v[i] * c2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
