use crate::error::{contract_err, shape_err, Result};
use crate::nn::Mode;
use crate::scalar::Scalar;
use crate::tape::{Backward, Tape, Var};
use crate::tensor::{numel, Tensor};

/// Running statistics and constants of one batch-normalization layer. The
/// learnable scale and shift live with the other parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState<T> {
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    /// Weight of the previous running value in each update.
    pub momentum: T,
    pub eps: T,
}

impl<T: Scalar> BatchNormState<T> {
    pub const DEFAULT_MOMENTUM: f64 = 0.9;
    pub const DEFAULT_EPS: f64 = 1e-5;

    pub fn new(channels: usize) -> Self {
        BatchNormState {
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::ones(&[channels]),
            momentum: T::of(Self::DEFAULT_MOMENTUM),
            eps: T::of(Self::DEFAULT_EPS),
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }
}

/// Per-channel normalization of `x[n, c, ...]`.
///
/// Train mode normalizes by the biased batch statistics and folds them into
/// the running estimates; eval mode is the fixed affine map given by the
/// running estimates.
pub fn batch_norm<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    gamma: Var,
    beta: Var,
    state: &mut BatchNormState<T>,
    mode: Mode,
) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    if shape.len() < 2 {
        return Err(shape_err!("batch_norm needs [n, c, ...], got {:?}", shape));
    }
    let (n, c) = (shape[0], shape[1]);
    let spatial = numel(&shape[2..]);
    if state.channels() != c || tape.shape(gamma) != [c] || tape.shape(beta) != [c] {
        return Err(shape_err!(
            "batch_norm over {} channels with state of {} and affine {:?}/{:?}",
            c,
            state.channels(),
            tape.shape(gamma),
            tape.shape(beta)
        ));
    }
    let count = n * spatial;
    let xs = tape.value(x).data();
    let g = tape.value(gamma).data();
    let b = tape.value(beta).data();

    match mode {
        Mode::Train => {
            if count < 2 {
                return Err(contract_err!(
                    "batch statistics need at least 2 values per channel, got {}",
                    count
                ));
            }
            let inv_count = T::one() / T::of(count as f64);
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for (idx, chunk) in xs.chunks_exact(spatial).enumerate() {
                mean[idx % c] += chunk.iter().copied().sum::<T>();
            }
            mean.iter_mut().for_each(|m| *m *= inv_count);
            for (idx, chunk) in xs.chunks_exact(spatial).enumerate() {
                let m = mean[idx % c];
                var[idx % c] += chunk.iter().map(|&v| (v - m) * (v - m)).sum::<T>();
            }
            var.iter_mut().for_each(|v| *v *= inv_count);
            let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + state.eps).sqrt()).collect();

            let mut xhat = Vec::with_capacity(xs.len());
            let mut out = Vec::with_capacity(xs.len());
            for (idx, chunk) in xs.chunks_exact(spatial).enumerate() {
                let ch = idx % c;
                for &v in chunk {
                    let h = (v - mean[ch]) * inv_std[ch];
                    xhat.push(h);
                    out.push(g[ch] * h + b[ch]);
                }
            }
            let keep = state.momentum;
            let fresh = T::one() - keep;
            for ch in 0..c {
                let rm = &mut state.running_mean.data_mut()[ch];
                *rm = keep * *rm + fresh * mean[ch];
                let rv = &mut state.running_var.data_mut()[ch];
                *rv = keep * *rv + fresh * var[ch];
            }
            let out = Tensor::new(&shape, out)?;
            let xhat = Tensor::new(&shape, xhat)?;
            Ok(tape.record(out, &[x, gamma, beta], TrainRule { xhat, inv_std, spatial }))
        }
        Mode::Eval => {
            let rm = state.running_mean.data();
            let inv_std: Vec<T> = state
                .running_var
                .data()
                .iter()
                .map(|&v| T::one() / (v + state.eps).sqrt())
                .collect();
            let mut out = Vec::with_capacity(xs.len());
            for (idx, chunk) in xs.chunks_exact(spatial).enumerate() {
                let ch = idx % c;
                let scale = g[ch] * inv_std[ch];
                out.extend(chunk.iter().map(|&v| (v - rm[ch]) * scale + b[ch]));
            }
            let out = Tensor::new(&shape, out)?;
            Ok(tape.record(
                out,
                &[x, gamma, beta],
                EvalRule {
                    mean: rm.to_vec(),
                    inv_std,
                    spatial,
                },
            ))
        }
    }
}

struct TrainRule<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
    spatial: usize,
}

impl<T: Scalar> Backward<T> for TrainRule<T> {
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, need: &[bool]) -> Vec<Option<Tensor<T>>> {
        let gamma = inputs[1].data();
        let c = gamma.len();
        let mut sum_g = vec![T::zero(); c];
        let mut sum_gx = vec![T::zero(); c];
        for (idx, (gc, hc)) in grad
            .data()
            .chunks_exact(self.spatial)
            .zip(self.xhat.data().chunks_exact(self.spatial))
            .enumerate()
        {
            let ch = idx % c;
            for (&g, &h) in gc.iter().zip(hc) {
                sum_g[ch] += g;
                sum_gx[ch] += g * h;
            }
        }
        let dx = need[0].then(|| {
            let count = T::of((grad.len() / c) as f64);
            let mut dx = Vec::with_capacity(grad.len());
            for (idx, (gc, hc)) in grad
                .data()
                .chunks_exact(self.spatial)
                .zip(self.xhat.data().chunks_exact(self.spatial))
                .enumerate()
            {
                let ch = idx % c;
                let k = gamma[ch] * self.inv_std[ch] / count;
                for (&g, &h) in gc.iter().zip(hc) {
                    dx.push(k * (count * g - sum_g[ch] - h * sum_gx[ch]));
                }
            }
            Tensor::new(grad.shape(), dx).expect("shape")
        });
        vec![
            dx,
            need[1].then(|| Tensor::new(&[c], sum_gx).expect("shape")),
            need[2].then(|| Tensor::new(&[c], sum_g).expect("shape")),
        ]
    }
}

struct EvalRule<T> {
    mean: Vec<T>,
    inv_std: Vec<T>,
    spatial: usize,
}

impl<T: Scalar> Backward<T> for EvalRule<T> {
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, need: &[bool]) -> Vec<Option<Tensor<T>>> {
        let (x, gamma) = (inputs[0], inputs[1].data());
        let c = gamma.len();
        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        let mut dx = Vec::with_capacity(if need[0] { x.len() } else { 0 });
        for (idx, (gc, xc)) in grad
            .data()
            .chunks_exact(self.spatial)
            .zip(x.data().chunks_exact(self.spatial))
            .enumerate()
        {
            let ch = idx % c;
            for (&g, &v) in gc.iter().zip(xc) {
                dbeta[ch] += g;
                dgamma[ch] += g * (v - self.mean[ch]) * self.inv_std[ch];
            }
            if need[0] {
                let scale = gamma[ch] * self.inv_std[ch];
                dx.extend(gc.iter().map(|&g| g * scale));
            }
        }
        vec![
            need[0].then(|| Tensor::new(x.shape(), dx).expect("shape")),
            need[1].then(|| Tensor::new(&[c], dgamma).expect("shape")),
            need[2].then(|| Tensor::new(&[c], dbeta).expect("shape")),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn standardized_input() -> Tensor<f64> {
        // each channel holds the values {-1, 1} repeated: mean 0, biased var 1
        Tensor::from_fn(&[2, 3, 2, 2], |i| if i % 2 == 0 { -1.0 } else { 1.0 })
    }

    #[test]
    fn standardized_input_passes_through() {
        let mut tape = Tape::new();
        let x = tape.constant(standardized_input());
        let g = tape.constant(Tensor::ones(&[3]));
        let b = tape.constant(Tensor::zeros(&[3]));
        let mut st = BatchNormState::new(3);
        let y = batch_norm(&mut tape, x, g, b, &mut st, Mode::Train).unwrap();
        let scale = 1.0 / (1.0f64 + 1e-5).sqrt();
        for (&o, &i) in tape.value(y).data().iter().zip(standardized_input().data()) {
            assert!((o - i * scale).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_gamma_yields_beta() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::<f64>::from_fn(&[2, 2, 3, 3], |i| (i as f64).sin()));
        let g = tape.constant(Tensor::zeros(&[2]));
        let b = tape.constant(Tensor::new(&[2], vec![0.25, -3.0]).unwrap());
        for mode in [Mode::Train, Mode::Eval] {
            let mut st = BatchNormState::new(2);
            let y = batch_norm(&mut tape, x, g, b, &mut st, mode).unwrap();
            for n in 0..2 {
                for c in 0..2 {
                    for p in 0..9 {
                        let want = [0.25, -3.0][c];
                        assert_eq!(tape.value(y).data()[(n * 2 + c) * 9 + p], want);
                    }
                }
            }
        }
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::<f64>::from_fn(&[4, 1], |i| i as f64)); // mean 1.5, var 1.25
        let g = tape.constant(Tensor::ones(&[1]));
        let b = tape.constant(Tensor::zeros(&[1]));
        let mut st = BatchNormState::new(1);
        batch_norm(&mut tape, x, g, b, &mut st, Mode::Train).unwrap();
        assert!((st.running_mean.data()[0] - 0.15).abs() < 1e-12);
        assert!((st.running_var.data()[0] - (0.9 + 0.125)).abs() < 1e-12);
    }

    #[test]
    fn single_value_statistics_rejected() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::ones(&[1, 2, 1, 1]));
        let g = tape.constant(Tensor::ones(&[2]));
        let b = tape.constant(Tensor::zeros(&[2]));
        let mut st = BatchNormState::new(2);
        assert!(batch_norm(&mut tape, x, g, b, &mut st, Mode::Train).is_err());
        assert!(batch_norm(&mut tape, x, g, b, &mut st, Mode::Eval).is_ok());
    }

    #[test]
    fn eval_mode_is_pure() {
        let mut st = BatchNormState::<f32>::new(2);
        st.running_mean = Tensor::new(&[2], vec![0.5, -0.5]).unwrap();
        st.running_var = Tensor::new(&[2], vec![2.0, 0.25]).unwrap();
        let before = st.clone();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_fn(&[3, 2, 2, 2], |i| i as f32 * 0.1));
        let g = tape.constant(Tensor::ones(&[2]));
        let b = tape.constant(Tensor::zeros(&[2]));
        let y1 = batch_norm(&mut tape, x, g, b, &mut st, Mode::Eval).unwrap();
        let y2 = batch_norm(&mut tape, x, g, b, &mut st, Mode::Eval).unwrap();
        assert_eq!(tape.value(y1), tape.value(y2));
        assert_eq!(st, before);
        assert!(st.running_var.data().iter().all(|&v| v >= 0.0));
    }
}
