use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tape::{Backward, Tape, Var};
use crate::tensor::Tensor;

/// Average pooling over `window x window` cells of `x[n,c,h,w]`.
///
/// The output extent is `floor((h - window) / stride) + 1`; trailing rows and
/// columns that do not fill a window are dropped.
pub fn avg_pool2d<T: Scalar>(tape: &mut Tape<T>, x: Var, window: usize, stride: usize) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    if shape.len() != 4 {
        return Err(shape_err!("avg_pool2d input must be [n,c,h,w], got {:?}", shape));
    }
    let (h, w) = (shape[2], shape[3]);
    if window == 0 || stride == 0 || window > h || window > w {
        return Err(shape_err!("pool window {} stride {} on {}x{} input", window, stride, h, w));
    }
    let (oh, ow) = ((h - window) / stride + 1, (w - window) / stride + 1);
    let scale = T::one() / T::of((window * window) as f64);
    let planes = shape[0] * shape[1];
    let mut out = Vec::with_capacity(planes * oh * ow);
    for plane in tape.value(x).data().chunks_exact(h * w) {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = T::zero();
                for i in 0..window {
                    let row = (oy * stride + i) * w + ox * stride;
                    acc += plane[row..row + window].iter().copied().sum::<T>();
                }
                out.push(acc * scale);
            }
        }
    }
    let out = Tensor::new(&[shape[0], shape[1], oh, ow], out)?;
    Ok(tape.record(out, &[x], AvgPoolRule { window, stride }))
}

/// Mean over the spatial axes: `[n,c,h,w] -> [n,c]`.
pub fn global_avg_pool<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    if shape.len() != 4 {
        return Err(shape_err!("global_avg_pool input must be [n,c,h,w], got {:?}", shape));
    }
    let flat = tape.reshape(x, &[shape[0], shape[1], shape[2] * shape[3]])?;
    let summed = tape.sum_axis(flat, 2)?;
    Ok(tape.scale(summed, T::one() / T::of((shape[2] * shape[3]) as f64)))
}

struct AvgPoolRule {
    window: usize,
    stride: usize,
}

impl<T: Scalar> Backward<T> for AvgPoolRule {
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, _: &[bool]) -> Vec<Option<Tensor<T>>> {
        let x = inputs[0];
        let (h, w) = (x.shape()[2], x.shape()[3]);
        let (oh, ow) = (grad.shape()[2], grad.shape()[3]);
        let scale = T::one() / T::of((self.window * self.window) as f64);
        let mut dx = Tensor::zeros(x.shape());
        for (plane, g) in dx.data_mut().chunks_exact_mut(h * w).zip(grad.data().chunks_exact(oh * ow)) {
            for oy in 0..oh {
                for ox in 0..ow {
                    let v = g[oy * ow + ox] * scale;
                    for i in 0..self.window {
                        let row = (oy * self.stride + i) * w + ox * self.stride;
                        plane[row..row + self.window].iter_mut().for_each(|d| *d += v);
                    }
                }
            }
        }
        vec![Some(dx)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_input_stays_constant() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::full(&[2, 3, 6, 6], 1.75));
        let y = avg_pool2d(&mut tape, x, 2, 2).unwrap();
        assert_eq!(tape.shape(y), &[2, 3, 3, 3]);
        assert!(tape.value(y).data().iter().all(|&v| v == 1.75));
    }

    #[test]
    fn two_by_two_mean() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = avg_pool2d(&mut tape, x, 2, 2).unwrap();
        assert_eq!(tape.value(y).data(), &[2.5]);
    }

    #[test]
    fn odd_extent_floors() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(&[1, 1, 75, 75]));
        let y = avg_pool2d(&mut tape, x, 2, 2).unwrap();
        assert_eq!(tape.shape(y), &[1, 1, 37, 37]);
        assert!(avg_pool2d(&mut tape, x, 76, 76).is_err());
    }

    #[test]
    fn global_pool_gives_channel_means() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_fn(&[1, 2, 2, 3], |i| i as f64));
        let y = global_avg_pool(&mut tape, x).unwrap();
        assert_eq!(tape.shape(y), &[1, 2]);
        assert_eq!(tape.value(y).data(), &[2.5, 8.5]);
    }
}
