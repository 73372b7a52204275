//! Relation-network head: objects from feature-map locations, a shared MLP
//! over every ordered object pair, their mean, and an aggregate MLP.

use crate::error::{shape_err, Result};
use crate::models::layers::{LinearLayer, ParamStore, Session};
use crate::models::RelationNetConfig;
use crate::scalar::Scalar;
use crate::tape::{Backward, Tape, Var};
use crate::tensor::Tensor;
use crate::Rng;

/// Normalized coordinate of index `i` along an axis of length `extent`; a
/// single-cell axis maps to 0.
fn normalized(i: usize, extent: usize) -> f64 {
    if extent > 1 {
        i as f64 / (extent - 1) as f64
    } else {
        0.0
    }
}

/// `[n, c, h, w] -> [n, h*w, c+2]`: object `y*w + x` is the channel vector at
/// `(y, x)` followed by `(x/(w-1), y/(h-1))`.
pub fn extract_objects<T: Scalar>(tape: &mut Tape<T>, features: Var) -> Result<Var> {
    let shape = tape.shape(features).to_vec();
    if shape.len() != 4 {
        return Err(shape_err!("extract_objects needs [n,c,h,w], got {:?}", shape));
    }
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let channels_last = tape.permute(features, &[0, 2, 3, 1])?;
    let objects = tape.reshape(channels_last, &[n, h * w, c])?;
    let coords = Tensor::from_fn(&[n, h * w, 2], |i| {
        let cell = (i / 2) % (h * w);
        let v = if i % 2 == 0 {
            normalized(cell % w, w)
        } else {
            normalized(cell / w, h)
        };
        T::of(v)
    });
    let coords = tape.constant(coords);
    tape.concat(&[objects, coords], 2)
}

/// `[n, m, f]` objects and `[n, q]` questions to `[n*m*m, 2f+q]` rows where
/// row `(b, i, j)` is `concat(o_bi, o_bj, q_b)`.
pub fn pair_features<T: Scalar>(tape: &mut Tape<T>, objects: Var, question: Var) -> Result<Var> {
    let so = tape.shape(objects).to_vec();
    let sq = tape.shape(question).to_vec();
    if so.len() != 3 || sq.len() != 2 || so[0] != sq[0] {
        return Err(shape_err!("pair_features objects {:?} with question {:?}", so, sq));
    }
    let (n, m, f, q) = (so[0], so[1], so[2], sq[1]);
    if m == 0 {
        return Err(shape_err!("pair_features needs at least one object"));
    }
    let width = 2 * f + q;
    let ov = tape.value(objects).data();
    let qv = tape.value(question).data();
    let mut data = Vec::with_capacity(n * m * m * width);
    for b in 0..n {
        let obj = &ov[b * m * f..(b + 1) * m * f];
        let qb = &qv[b * q..(b + 1) * q];
        for i in 0..m {
            for j in 0..m {
                data.extend_from_slice(&obj[i * f..(i + 1) * f]);
                data.extend_from_slice(&obj[j * f..(j + 1) * f]);
                data.extend_from_slice(qb);
            }
        }
    }
    let out = Tensor::new(&[n * m * m, width], data)?;
    Ok(tape.record(out, &[objects, question], PairRule { n, m, f, q }))
}

struct PairRule {
    n: usize,
    m: usize,
    f: usize,
    q: usize,
}

impl<T: Scalar> Backward<T> for PairRule {
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, need: &[bool]) -> Vec<Option<Tensor<T>>> {
        let PairRule { n, m, f, q } = *self;
        let width = 2 * f + q;
        let mut dobj = vec![T::zero(); n * m * f];
        let mut dq = vec![T::zero(); n * q];
        for b in 0..n {
            for i in 0..m {
                for j in 0..m {
                    let row = &grad.data()[((b * m + i) * m + j) * width..][..width];
                    if need[0] {
                        let oi = (b * m + i) * f;
                        let oj = (b * m + j) * f;
                        for k in 0..f {
                            dobj[oi + k] += row[k];
                            dobj[oj + k] += row[f + k];
                        }
                    }
                    if need[1] {
                        for (d, &g) in dq[b * q..(b + 1) * q].iter_mut().zip(&row[2 * f..]) {
                            *d += g;
                        }
                    }
                }
            }
        }
        vec![
            need[0].then(|| Tensor::new(&[n, m, f], dobj).expect("shape")),
            need[1].then(|| Tensor::new(&[n, q], dq).expect("shape")),
        ]
    }
}

/// Pair MLP `g`, aggregation over all ordered pairs, then MLP `f`.
///
/// The aggregate is the pair sum divided by the (fixed) pair count `m^2`:
/// the same function class as the plain sum, but `f` sees inputs of unit
/// scale instead of `m^2` times that.
#[derive(Debug, Clone)]
pub struct RelationModule {
    g: Vec<LinearLayer>,
    f_hidden: LinearLayer,
    f_out: LinearLayer,
    f_dropout: f64,
}

impl RelationModule {
    pub fn build<T: Scalar>(
        store: &mut ParamStore<T>,
        object_dim: usize,
        config: &RelationNetConfig,
        question_dim: usize,
        classes: usize,
        rng: &mut Rng,
    ) -> Self {
        let mut width = 2 * object_dim + question_dim;
        let g = (0..config.g_layers)
            .map(|i| {
                let layer = LinearLayer::new(store, &format!("rn.g{}", i), width, config.g_hidden, rng);
                width = config.g_hidden;
                layer
            })
            .collect();
        RelationModule {
            g,
            f_hidden: LinearLayer::new(store, "rn.f0", width, config.f_hidden, rng),
            f_out: LinearLayer::output(store, "rn.f1", config.f_hidden, classes, rng),
            f_dropout: config.f_dropout,
        }
    }

    pub fn linear_layer_count(&self) -> usize {
        self.g.len() + 2
    }

    /// Logits `[n, classes]` for objects `[n, m, f]` and questions `[n, q]`.
    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, objects: Var, question: Var) -> Result<Var> {
        let n = s.tape.shape(objects)[0];
        let m = s.tape.shape(objects)[1];
        let mut h = pair_features(&mut s.tape, objects, question)?;
        for layer in &self.g {
            h = layer.forward(s, h)?;
            h = s.relu(h);
        }
        let width = s.tape.shape(h)[1];
        let grouped = s.tape.reshape(h, &[n, m * m, width])?;
        let summed = s.tape.sum_axis(grouped, 1)?;
        let pooled = s.tape.scale(summed, T::of(1.0 / (m * m) as f64));
        let h = self.f_hidden.forward(s, pooled)?;
        let h = s.relu(h);
        let h = s.dropout(h, self.f_dropout)?;
        self.f_out.forward(s, h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn object_coordinates_span_unit_square() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::from_fn(&[1, 3, 5, 5], |i| i as f32));
        let o = extract_objects(&mut tape, x).unwrap();
        assert_eq!(tape.shape(o), &[1, 25, 5]);
        let v = tape.value(o);
        assert_eq!((v.at(&[0, 0, 3]), v.at(&[0, 0, 4])), (0.0, 0.0));
        assert_eq!((v.at(&[0, 24, 3]), v.at(&[0, 24, 4])), (1.0, 1.0));
        // object 7 is (y=1, x=2)
        assert_eq!((v.at(&[0, 7, 3]), v.at(&[0, 7, 4])), (0.5, 0.25));
        let input = tape.value(x);
        for c in 0..3 {
            assert_eq!(v.at(&[0, 7, c]), input.at(&[0, c, 1, 2]));
        }
    }

    #[test]
    fn single_cell_grid_has_zero_coordinates() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::ones(&[2, 4, 1, 1]));
        let o = extract_objects(&mut tape, x).unwrap();
        assert_eq!(tape.shape(o), &[2, 1, 6]);
        assert_eq!(&tape.value(o).data()[4..6], &[0.0, 0.0]);
    }

    #[test]
    fn pair_rows_follow_ordered_pairs() {
        let mut tape = Tape::<f64>::new();
        let o = tape.constant(Tensor::from_fn(&[1, 2, 1], |i| i as f64 + 1.0));
        let q = tape.constant(Tensor::new(&[1, 1], vec![9.0]).unwrap());
        let p = pair_features(&mut tape, o, q).unwrap();
        assert_eq!(
            tape.value(p).data(),
            &[1.0, 1.0, 9.0, 1.0, 2.0, 9.0, 2.0, 1.0, 9.0, 2.0, 2.0, 9.0]
        );
    }
}
