use crate::error::{contract_err, shape_err, Result};
use crate::scalar::Scalar;
use crate::tape::{Backward, Tape, Var};
use crate::tensor::Tensor;

/// Row-wise softmax of `[n, k]` logits, computed with the max subtracted.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let k = *logits.shape().last().expect("softmax of a scalar");
    let mut out = logits.clone();
    for row in out.data_mut().chunks_exact_mut(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        row.iter_mut().for_each(|v| *v /= z);
    }
    out
}

/// Index of the largest logit in each row.
pub fn argmax_rows<T: Scalar>(logits: &Tensor<T>) -> Vec<usize> {
    let k = *logits.shape().last().expect("argmax of a scalar");
    logits
        .data()
        .chunks_exact(k)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Mean over the batch of `-log softmax(logits)[label]`.
pub fn softmax_cross_entropy<T: Scalar>(tape: &mut Tape<T>, logits: Var, labels: &[usize]) -> Result<Var> {
    let shape = tape.shape(logits).to_vec();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(shape_err!("logits {:?} for {} labels", shape, labels.len()));
    }
    let k = shape[1];
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(contract_err!("label {} outside [0, {})", bad, k));
    }
    let n = labels.len();
    let mut loss = T::zero();
    for (row, &label) in tape.value(logits).data().chunks_exact(k).zip(labels) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        loss += lse - row[label];
    }
    let loss = Tensor::scalar(loss / T::of(n as f64));
    let probs = softmax(tape.value(logits));
    Ok(tape.record(
        loss,
        &[logits],
        CrossEntropyRule {
            probs,
            labels: labels.to_vec(),
        },
    ))
}

struct CrossEntropyRule<T> {
    probs: Tensor<T>,
    labels: Vec<usize>,
}

impl<T: Scalar> Backward<T> for CrossEntropyRule<T> {
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, _: &[bool]) -> Vec<Option<Tensor<T>>> {
        let k = self.probs.shape()[1];
        let scale = grad.item() / T::of(self.labels.len() as f64);
        let mut d = self.probs.clone();
        for (row, &label) in d.data_mut().chunks_exact_mut(k).zip(&self.labels) {
            row[label] -= T::one();
            row.iter_mut().for_each(|v| *v *= scale);
        }
        vec![Some(d)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_k() {
        let mut tape = Tape::<f64>::new();
        let l = tape.variable(Tensor::zeros(&[4, 10]));
        let loss = softmax_cross_entropy(&mut tape, l, &[0, 3, 9, 5]).unwrap();
        assert!((tape.value(loss).item() - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_logit_approaches_zero() {
        let mut tape = Tape::<f64>::new();
        let mut row = vec![0.0; 10];
        row[2] = 50.0;
        let l = tape.variable(Tensor::new(&[1, 10], row).unwrap());
        let loss = softmax_cross_entropy(&mut tape, l, &[2]).unwrap();
        assert!(tape.value(loss).item() < 1e-20);
    }

    #[test]
    fn out_of_range_label_rejected() {
        let mut tape = Tape::<f32>::new();
        let l = tape.variable(Tensor::zeros(&[1, 10]));
        assert!(matches!(
            softmax_cross_entropy(&mut tape, l, &[10]),
            Err(crate::Error::Contract(_))
        ));
    }

    #[test]
    fn gradient_is_softmax_minus_onehot_over_n() {
        let mut tape = Tape::<f64>::new();
        let l = tape.variable(Tensor::zeros(&[2, 4]));
        let loss = softmax_cross_entropy(&mut tape, l, &[1, 3]).unwrap();
        let g = tape.backward(loss).unwrap();
        let d = g.get(l).unwrap();
        assert!((d.at(&[0, 1]) - (0.25 - 1.0) / 2.0).abs() < 1e-15);
        assert!((d.at(&[0, 0]) - 0.25 / 2.0).abs() < 1e-15);
    }
}
