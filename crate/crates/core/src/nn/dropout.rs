use rand::Rng;

use crate::error::{contract_err, Result};
use crate::nn::Mode;
use crate::scalar::Scalar;
use crate::tape::{Backward, Tape, Var};
use crate::tensor::Tensor;

/// Inverted dropout: in train mode each element is zeroed with probability
/// `rate` and survivors are scaled by `1/(1-rate)`; eval mode is the identity.
pub fn dropout<T: Scalar, R: Rng + ?Sized>(tape: &mut Tape<T>, x: Var, rate: f64, mode: Mode, rng: &mut R) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(contract_err!("dropout rate {} outside [0, 1)", rate));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(x);
    }
    let keep = T::of(1.0 / (1.0 - rate));
    // An element is dropped when a uniform u32 falls below rate * 2^32.
    let threshold = (rate * 4_294_967_296.0) as u64;
    let mut draws = vec![0u32; tape.value(x).len()];
    rng.fill(&mut draws[..]);
    let mask: Vec<T> = draws
        .into_iter()
        .map(|u| if (u as u64) < threshold { T::zero() } else { keep })
        .collect();
    let mask = Tensor::new(tape.shape(x), mask)?;
    let out = tape.value(x).zip_map(&mask, |v, m| v * m)?;
    Ok(tape.record(out, &[x], MaskRule(mask)))
}

struct MaskRule<T>(Tensor<T>);

impl<T: Scalar> Backward<T> for MaskRule<T> {
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, _: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![Some(grad.zip_map(&self.0, |g, m| g * m).expect("same shape"))]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut tape = Tape::<f32>::new();
        let x = tape.variable(Tensor::from_fn(&[10], |i| i as f32));
        for mode in [Mode::Train, Mode::Eval] {
            let y = dropout(&mut tape, x, 0.0, mode, &mut rng).unwrap();
            assert_eq!(tape.value(y), tape.value(x));
        }
        let y = dropout(&mut tape, x, 0.7, Mode::Eval, &mut rng).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
    }

    #[test]
    fn rate_one_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut tape = Tape::<f32>::new();
        let x = tape.variable(Tensor::ones(&[4]));
        assert!(dropout(&mut tape, x, 1.0, Mode::Train, &mut rng).is_err());
        assert!(dropout(&mut tape, x, -0.1, Mode::Eval, &mut rng).is_err());
    }

    #[test]
    fn monte_carlo_survival_and_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut tape = Tape::<f64>::new();
        let n = 1_000_000;
        let x = tape.constant(Tensor::from_fn(&[n], |i| 1.0 + (i % 7) as f64));
        let y = dropout(&mut tape, x, 0.5, Mode::Train, &mut rng).unwrap();
        let out = tape.value(y).data();
        let survivors = out.iter().filter(|&&v| v != 0.0).count() as f64 / n as f64;
        assert!((survivors - 0.5).abs() <= 0.01, "survivor fraction {}", survivors);
        let mean_in = tape.value(x).sum() / n as f64;
        let mean_out = tape.value(y).sum() / n as f64;
        assert!(((mean_out - mean_in) / mean_in).abs() <= 0.02);
    }
}
