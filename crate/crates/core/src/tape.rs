//! Reverse-mode automatic differentiation over a recorded operation tape.
//!
//! Every value produced during a forward pass is appended to a [`Tape`] and
//! addressed by a [`Var`]. Values created with [`Tape::variable`] are tracked;
//! any operation with at least one tracked input records a backward rule.
//! Because nodes are only ever appended, the tape is topologically ordered by
//! construction and [`Tape::backward`] is a single reverse sweep.

use crate::error::{contract_err, shape_err, Result};
use crate::scalar::{gemm, Scalar};
use crate::tensor::{numel, Tensor};

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The vector-Jacobian product of one recorded operation.
pub trait Backward<T: Scalar> {
    /// Returns one gradient per input, in input order. Entries whose
    /// `needs_grad` flag is false may be `None`.
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &Tensor<T>,
        needs_grad: &[bool],
    ) -> Vec<Option<Tensor<T>>>;
}

struct Node<T> {
    value: Tensor<T>,
    inputs: Vec<Var>,
    rule: Option<Box<dyn Backward<T>>>,
    tracked: bool,
}

/// A per-forward-pass record of values and the operations producing them.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    /// Nodes produced by `relu`, for [`Tape::relu_pattern`].
    relus: Vec<usize>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar loss with respect to the tracked leaves of a tape.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            relus: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A tracked leaf; it receives a gradient from [`Tape::backward`].
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Vec::new(), None, true)
    }

    /// An untracked leaf; it never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Vec::new(), None, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Appends the result of an operation. The backward rule is kept only when
    /// some input is tracked.
    pub fn record(&mut self, value: Tensor<T>, inputs: &[Var], rule: impl Backward<T> + 'static) -> Var {
        let tracked = inputs.iter().any(|&v| self.nodes[v.0].tracked);
        let rule: Option<Box<dyn Backward<T>>> = if tracked { Some(Box::new(rule)) } else { None };
        self.push(value, inputs.to_vec(), rule, tracked)
    }

    fn push(&mut self, value: Tensor<T>, inputs: Vec<Var>, rule: Option<Box<dyn Backward<T>>>, tracked: bool) -> Var {
        self.nodes.push(Node {
            value,
            inputs,
            rule,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    /// Back-propagates from a scalar loss. Only tracked leaves keep their
    /// gradients in the result.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let node = &self.nodes[loss.0];
        if node.value.len() != 1 {
            return Err(contract_err!(
                "backward needs a scalar loss, got shape {:?}",
                node.value.shape()
            ));
        }
        if !node.tracked {
            return Err(contract_err!("backward from an untracked value"));
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Tensor::ones(node.value.shape()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some(rule) = node.rule.as_ref() else {
                continue;
            };
            let Some(grad) = grads[i].take() else {
                continue;
            };
            let inputs: Vec<&Tensor<T>> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let needs: Vec<bool> = node.inputs.iter().map(|v| self.nodes[v.0].tracked).collect();
            let input_grads = rule.backward(&inputs, &node.value, &grad, &needs);
            debug_assert_eq!(input_grads.len(), node.inputs.len());
            for ((&input, g), &need) in node.inputs.iter().zip(input_grads).zip(&needs) {
                let (Some(g), true) = (g, need) else {
                    continue;
                };
                debug_assert_eq!(g.shape(), self.nodes[input.0].value.shape());
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(Gradients { grads })
    }

    // ---- elementwise -------------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.record(out, &[a, b], AddRule))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.record(out, &[a, b], SubRule))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.record(out, &[a, b], MulRule))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).map(|x| x * s);
        self.record(out, &[a], ScaleRule(s))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        let v = self.record(out, &[a], ReluRule);
        self.relus.push(v.0);
        v
    }

    /// Which inputs of every `relu` so far were positive. Two evaluations with
    /// equal patterns lie on the same linear piece of every ReLU.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.relus
            .iter()
            .flat_map(|&i| self.nodes[i].value.data().iter().map(|&v| v > T::zero()))
            .collect()
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.record(out, &[a], SumRule)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = T::of(self.value(a).len() as f64);
        let s = self.sum(a);
        self.scale(s, T::one() / n)
    }

    // ---- linear algebra ----------------------------------------------------

    /// `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err!("matmul {:?} x {:?}", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, false);
        let out = Tensor::new(&[m, n], out)?;
        Ok(self.record(out, &[a, b], MatMulRule))
    }

    /// Adds `bias[n]` to every row of `x[.., n]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        let n = *sx.last().ok_or_else(|| shape_err!("add_bias on a scalar"))?;
        if sb != [n] {
            return Err(shape_err!("bias {:?} does not match trailing extent of {:?}", sb, sx));
        }
        let mut out = self.value(x).clone();
        let b = self.value(bias).data();
        for row in out.data_mut().chunks_exact_mut(n) {
            for (v, &bv) in row.iter_mut().zip(b) {
                *v += bv;
            }
        }
        Ok(self.record(out, &[x, bias], AddBiasRule))
    }

    // ---- layout ------------------------------------------------------------

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        Ok(self.record(out, &[a], ReshapeRule))
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let out = self.value(a).permute(axes)?;
        Ok(self.record(out, &[a], PermuteRule(axes.to_vec())))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        if self.shape(a).len() != 2 {
            return Err(shape_err!("transpose needs rank 2, got {:?}", self.shape(a)));
        }
        self.permute(a, &[1, 0])
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let values: Vec<&Tensor<T>> = parts.iter().map(|&v| self.value(v)).collect();
        let out = Tensor::concat(&values, axis)?;
        let sizes = values.iter().map(|t| t.shape()[axis]).collect();
        Ok(self.record(out, parts, ConcatRule { axis, sizes }))
    }

    /// Concatenation along the channel axis of `[n,c,h,w]` tensors.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        if let Some(bad) = parts.iter().find(|&&v| self.shape(v).len() != 4) {
            return Err(shape_err!("concat_channels needs rank-4 parts, got {:?}", self.shape(*bad)));
        }
        self.concat(parts, 1)
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let out = self.value(a).slice_axis(axis, start, len)?;
        Ok(self.record(out, &[a], SliceRule { axis, start }))
    }

    /// Selects rows (entries along axis 0); `out[i] = a[rows[i]]`.
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let src = self.value(a);
        let extent = *src.shape().first().ok_or_else(|| shape_err!("gather_rows on a scalar"))?;
        if let Some(&bad) = rows.iter().find(|&&r| r >= extent) {
            return Err(shape_err!("row {} out of range for extent {}", bad, extent));
        }
        let inner = numel(&src.shape()[1..]);
        let mut data = Vec::with_capacity(rows.len() * inner);
        for &r in rows {
            data.extend_from_slice(&src.data()[r * inner..(r + 1) * inner]);
        }
        let mut shape = src.shape().to_vec();
        shape[0] = rows.len();
        let out = Tensor::new(&shape, data)?;
        Ok(self.record(out, &[a], GatherRowsRule(rows.to_vec())))
    }

    /// Sums over one axis, removing it.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(shape_err!("sum_axis {} on {:?}", axis, shape));
        }
        let outer = numel(&shape[..axis]);
        let extent = shape[axis];
        let inner = numel(&shape[axis + 1..]);
        let src = self.value(a).data();
        let mut data = vec![T::zero(); outer * inner];
        for o in 0..outer {
            let dst = &mut data[o * inner..(o + 1) * inner];
            for e in 0..extent {
                let base = (o * extent + e) * inner;
                for (d, &s) in dst.iter_mut().zip(&src[base..base + inner]) {
                    *d += s;
                }
            }
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        let out = Tensor::new(&out_shape, data)?;
        Ok(self.record(out, &[a], SumAxisRule { axis, extent }))
    }
}

struct AddRule;
impl<T: Scalar> Backward<T> for AddRule {
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![Some(g.clone()), Some(g.clone())]
    }
}

struct SubRule;
impl<T: Scalar> Backward<T> for SubRule {
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![Some(g.clone()), Some(g.map(|v| -v))]
    }
}

struct MulRule;
impl<T: Scalar> Backward<T> for MulRule {
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, need: &[bool]) -> Vec<Option<Tensor<T>>> {
        let da = need[0].then(|| g.zip_map(x[1], |g, b| g * b).expect("same shape"));
        let db = need[1].then(|| g.zip_map(x[0], |g, a| g * a).expect("same shape"));
        vec![da, db]
    }
}

struct ScaleRule<T>(T);
impl<T: Scalar> Backward<T> for ScaleRule<T> {
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![Some(g.map(|v| v * self.0))]
    }
}

struct ReluRule;
impl<T: Scalar> Backward<T> for ReluRule {
    fn backward(&self, _: &[&Tensor<T>], out: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Vec<Option<Tensor<T>>> {
        let d = g
            .zip_map(out, |g, y| if y > T::zero() { g } else { T::zero() })
            .expect("same shape");
        vec![Some(d)]
    }
}

struct SumRule;
impl<T: Scalar> Backward<T> for SumRule {
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![Some(Tensor::full(x[0].shape(), g.item()))]
    }
}

struct MatMulRule;
impl<T: Scalar> Backward<T> for MatMulRule {
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, need: &[bool]) -> Vec<Option<Tensor<T>>> {
        let (a, b) = (x[0], x[1]);
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let da = need[0].then(|| {
            let mut d = vec![T::zero(); m * k];
            gemm(m, n, k, g.data(), false, b.data(), true, &mut d, false);
            Tensor::new(&[m, k], d).expect("shape")
        });
        let db = need[1].then(|| {
            let mut d = vec![T::zero(); k * n];
            gemm(k, m, n, a.data(), true, g.data(), false, &mut d, false);
            Tensor::new(&[k, n], d).expect("shape")
        });
        vec![da, db]
    }
}

struct AddBiasRule;
impl<T: Scalar> Backward<T> for AddBiasRule {
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, need: &[bool]) -> Vec<Option<Tensor<T>>> {
        let db = need[1].then(|| {
            let n = x[1].len();
            let mut d = vec![T::zero(); n];
            for row in g.data().chunks_exact(n) {
                for (acc, &v) in d.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            Tensor::new(&[n], d).expect("shape")
        });
        vec![need[0].then(|| g.clone()), db]
    }
}

struct ReshapeRule;
impl<T: Scalar> Backward<T> for ReshapeRule {
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![Some(g.clone().reshape(x[0].shape()).expect("same numel"))]
    }
}

struct PermuteRule(Vec<usize>);
impl<T: Scalar> Backward<T> for PermuteRule {
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Vec<Option<Tensor<T>>> {
        let mut inverse = vec![0; self.0.len()];
        for (k, &a) in self.0.iter().enumerate() {
            inverse[a] = k;
        }
        vec![Some(g.permute(&inverse).expect("valid permutation"))]
    }
}

struct ConcatRule {
    axis: usize,
    sizes: Vec<usize>,
}
impl<T: Scalar> Backward<T> for ConcatRule {
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, need: &[bool]) -> Vec<Option<Tensor<T>>> {
        let mut start = 0;
        self.sizes
            .iter()
            .zip(need)
            .map(|(&len, &need)| {
                let part = need.then(|| g.slice_axis(self.axis, start, len).expect("in range"));
                start += len;
                part
            })
            .collect()
    }
}

struct SliceRule {
    axis: usize,
    start: usize,
}
impl<T: Scalar> Backward<T> for SliceRule {
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Vec<Option<Tensor<T>>> {
        let shape = x[0].shape();
        let outer = numel(&shape[..self.axis]);
        let inner = numel(&shape[self.axis + 1..]);
        let (extent, len) = (shape[self.axis], g.shape()[self.axis]);
        let mut d = Tensor::zeros(shape);
        let dst = d.data_mut();
        for o in 0..outer {
            let to = (o * extent + self.start) * inner;
            let from = o * len * inner;
            dst[to..to + len * inner].copy_from_slice(&g.data()[from..from + len * inner]);
        }
        vec![Some(d)]
    }
}

struct GatherRowsRule(Vec<usize>);
impl<T: Scalar> Backward<T> for GatherRowsRule {
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Vec<Option<Tensor<T>>> {
        let mut d = Tensor::zeros(x[0].shape());
        let inner = numel(&x[0].shape()[1..]);
        let dst = d.data_mut();
        for (i, &r) in self.0.iter().enumerate() {
            for (a, &v) in dst[r * inner..(r + 1) * inner]
                .iter_mut()
                .zip(&g.data()[i * inner..(i + 1) * inner])
            {
                *a += v;
            }
        }
        vec![Some(d)]
    }
}

struct SumAxisRule {
    axis: usize,
    extent: usize,
}
impl<T: Scalar> Backward<T> for SumAxisRule {
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Vec<Option<Tensor<T>>> {
        let shape = x[0].shape();
        let outer = numel(&shape[..self.axis]);
        let inner = numel(&shape[self.axis + 1..]);
        let mut data = Vec::with_capacity(x[0].len());
        for o in 0..outer {
            let row = &g.data()[o * inner..(o + 1) * inner];
            for _ in 0..self.extent {
                data.extend_from_slice(row);
            }
        }
        vec![Some(Tensor::new(shape, data).expect("shape"))]
    }
}
