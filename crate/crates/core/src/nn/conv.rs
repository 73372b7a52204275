//! Dilated 2-D convolution lowered to im2col + matrix multiply.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::scalar::{gemm, Scalar};
use crate::tape::{Backward, Tape, Var};
use crate::tensor::Tensor;

/// Geometry of a square-kernel convolution. Weights are `[out, in, k, k]`,
/// the bias is `[out]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv2dSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl Conv2dSpec {
    /// A stride-1 3x3 convolution padded by its dilation, which preserves the
    /// spatial extent.
    pub fn same_3x3(in_channels: usize, out_channels: usize, dilation: usize) -> Self {
        Conv2dSpec {
            in_channels,
            out_channels,
            kernel: 3,
            stride: 1,
            padding: dilation,
            dilation,
        }
    }

    pub fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        Conv2dSpec {
            in_channels,
            out_channels,
            kernel: 1,
            stride: 1,
            padding: 0,
            dilation: 1,
        }
    }

    /// Span of input pixels covered by one filter placement: `d(k-1)+1`.
    pub fn effective_kernel(&self) -> usize {
        self.dilation * (self.kernel - 1) + 1
    }

    /// Output extent along one spatial axis, or a shape error when the
    /// dilated kernel does not fit the padded input.
    pub fn output_extent(&self, input: usize) -> Result<usize> {
        let padded = input + 2 * self.padding;
        let k_eff = self.effective_kernel();
        if self.kernel == 0 || self.stride == 0 || self.dilation == 0 {
            return Err(shape_err!("degenerate convolution {:?}", self));
        }
        if k_eff > padded {
            return Err(shape_err!(
                "effective kernel {} exceeds padded input {} ({} + 2*{})",
                k_eff,
                padded,
                input,
                self.padding
            ));
        }
        Ok((padded - k_eff) / self.stride + 1)
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel, self.kernel]
    }

    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn check_input(&self, shape: &[usize]) -> Result<(usize, usize, usize, usize)> {
        if shape.len() != 4 {
            return Err(shape_err!("conv2d input must be [n,c,h,w], got {:?}", shape));
        }
        if shape[1] != self.in_channels {
            return Err(shape_err!(
                "conv2d expects {} input channels, got {}",
                self.in_channels,
                shape[1]
            ));
        }
        let oh = self.output_extent(shape[2])?;
        let ow = self.output_extent(shape[3])?;
        Ok((shape[2], shape[3], oh, ow))
    }
}

/// Range of output positions `o` with `0 <= o*stride + offset < extent`.
fn valid_range(offset: isize, stride: usize, extent: usize, outputs: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if offset >= 0 { 0 } else { ((-offset) + s - 1) / s };
    let hi = if (extent as isize) - offset <= 0 {
        0
    } else {
        ((extent as isize - 1 - offset) / s + 1).min(outputs as isize)
    };
    let lo = lo.min(outputs as isize) as usize;
    (lo, (hi.max(lo as isize)) as usize)
}

/// Unfolds one `[c,h,w]` image into `[c*k*k, oh*ow]` patch columns.
fn im2col<T: Scalar>(x: &[T], h: usize, w: usize, spec: &Conv2dSpec, oh: usize, ow: usize, cols: &mut [T]) {
    let k = spec.kernel;
    let (s, d, p) = (spec.stride, spec.dilation as isize, spec.padding as isize);
    let plane = oh * ow;
    for c in 0..spec.in_channels {
        let img = &x[c * h * w..(c + 1) * h * w];
        for i in 0..k {
            let (y_lo, y_hi) = valid_range(i as isize * d - p, s, h, oh);
            for j in 0..k {
                let row = (c * k + i) * k + j;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                let x_off = j as isize * d - p;
                let (x_lo, x_hi) = valid_range(x_off, s, w, ow);
                for oy in 0..oh {
                    let out_row = &mut dst[oy * ow..(oy + 1) * ow];
                    if oy < y_lo || oy >= y_hi {
                        out_row.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let iy = (oy * s) as isize + i as isize * d - p;
                    let src = &img[iy as usize * w..(iy as usize + 1) * w];
                    out_row[..x_lo].iter_mut().for_each(|v| *v = T::zero());
                    out_row[x_hi..].iter_mut().for_each(|v| *v = T::zero());
                    if s == 1 {
                        let start = (x_lo as isize + x_off) as usize;
                        out_row[x_lo..x_hi].copy_from_slice(&src[start..start + (x_hi - x_lo)]);
                    } else {
                        for ox in x_lo..x_hi {
                            out_row[ox] = src[((ox * s) as isize + x_off) as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the image.
fn col2im<T: Scalar>(cols: &[T], h: usize, w: usize, spec: &Conv2dSpec, oh: usize, ow: usize, dx: &mut [T]) {
    let k = spec.kernel;
    let (s, d, p) = (spec.stride, spec.dilation as isize, spec.padding as isize);
    let plane = oh * ow;
    for c in 0..spec.in_channels {
        let img = &mut dx[c * h * w..(c + 1) * h * w];
        for i in 0..k {
            let (y_lo, y_hi) = valid_range(i as isize * d - p, s, h, oh);
            for j in 0..k {
                let row = (c * k + i) * k + j;
                let src = &cols[row * plane..(row + 1) * plane];
                let x_off = j as isize * d - p;
                let (x_lo, x_hi) = valid_range(x_off, s, w, ow);
                for oy in y_lo..y_hi {
                    let iy = ((oy * s) as isize + i as isize * d - p) as usize;
                    let dst = &mut img[iy * w..(iy + 1) * w];
                    let g = &src[oy * ow..(oy + 1) * ow];
                    for ox in x_lo..x_hi {
                        dst[((ox * s) as isize + x_off) as usize] += g[ox];
                    }
                }
            }
        }
    }
}

fn is_identity_unfold(spec: &Conv2dSpec) -> bool {
    spec.kernel == 1 && spec.stride == 1 && spec.padding == 0
}

/// `out[n,o,y,x] = bias[o] + sum_{c,i,j} w[o,c,i,j] * xpad[n,c,y*s+i*d,x*s+j*d]`.
pub fn conv2d<T: Scalar>(tape: &mut Tape<T>, x: Var, weight: Var, bias: Var, spec: &Conv2dSpec) -> Result<Var> {
    let out = conv2d_forward(tape.value(x), tape.value(weight), tape.value(bias), spec)?;
    Ok(tape.record(out, &[x, weight, bias], ConvRule { spec: *spec }))
}

/// Untaped forward pass shared by [`conv2d`] and callers that need only values.
pub fn conv2d_forward<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>, spec: &Conv2dSpec) -> Result<Tensor<T>> {
    let (h, w, oh, ow) = spec.check_input(x.shape())?;
    if weight.shape() != spec.weight_shape() {
        return Err(shape_err!("conv weight {:?}, expected {:?}", weight.shape(), spec.weight_shape()));
    }
    if bias.shape() != [spec.out_channels] {
        return Err(shape_err!("conv bias {:?}, expected [{}]", bias.shape(), spec.out_channels));
    }
    let n = x.shape()[0];
    let (o, kk, plane) = (spec.out_channels, spec.patch_len(), oh * ow);
    let in_len = spec.in_channels * h * w;
    let mut out = vec![T::zero(); n * o * plane];
    let mut cols = if is_identity_unfold(spec) { Vec::new() } else { vec![T::zero(); kk * plane] };
    for b in 0..n {
        let img = &x.data()[b * in_len..(b + 1) * in_len];
        let dst = &mut out[b * o * plane..(b + 1) * o * plane];
        for (row, &bv) in dst.chunks_exact_mut(plane).zip(bias.data()) {
            row.iter_mut().for_each(|v| *v = bv);
        }
        let patches: &[T] = if is_identity_unfold(spec) {
            img
        } else {
            im2col(img, h, w, spec, oh, ow, &mut cols);
            &cols
        };
        gemm(o, kk, plane, weight.data(), false, patches, false, dst, true);
    }
    Tensor::new(&[n, o, oh, ow], out)
}

struct ConvRule {
    spec: Conv2dSpec,
}

impl<T: Scalar> Backward<T> for ConvRule {
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, need: &[bool]) -> Vec<Option<Tensor<T>>> {
        let spec = &self.spec;
        let (x, weight) = (inputs[0], inputs[1]);
        let (n, h, w) = (x.shape()[0], x.shape()[2], x.shape()[3]);
        let (oh, ow) = (grad.shape()[2], grad.shape()[3]);
        let (o, kk, plane) = (spec.out_channels, spec.patch_len(), oh * ow);
        let in_len = spec.in_channels * h * w;
        let identity = is_identity_unfold(spec);

        let mut dx = need[0].then(|| vec![T::zero(); x.len()]);
        let mut dw = need[1].then(|| vec![T::zero(); weight.len()]);
        let mut cols = if identity { Vec::new() } else { vec![T::zero(); kk * plane] };
        for b in 0..n {
            let g = &grad.data()[b * o * plane..(b + 1) * o * plane];
            if let Some(dw) = dw.as_mut() {
                let img = &x.data()[b * in_len..(b + 1) * in_len];
                let patches: &[T] = if identity {
                    img
                } else {
                    im2col(img, h, w, spec, oh, ow, &mut cols);
                    &cols
                };
                gemm(o, plane, kk, g, false, patches, true, dw, true);
            }
            if let Some(dx) = dx.as_mut() {
                let dst = &mut dx[b * in_len..(b + 1) * in_len];
                if identity {
                    gemm(kk, o, plane, weight.data(), true, g, false, dst, true);
                } else {
                    gemm(kk, o, plane, weight.data(), true, g, false, &mut cols, false);
                    col2im(&cols, h, w, spec, oh, ow, dst);
                }
            }
        }
        let db = need[2].then(|| {
            let mut db = vec![T::zero(); o];
            for (idx, row) in grad.data().chunks_exact(plane).enumerate() {
                db[idx % o] += row.iter().copied().sum::<T>();
            }
            Tensor::new(&[o], db).expect("shape")
        });
        vec![
            dx.map(|d| Tensor::new(x.shape(), d).expect("shape")),
            dw.map(|d| Tensor::new(weight.shape(), d).expect("shape")),
            db,
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn effective_kernel_extents() {
        assert_eq!(Conv2dSpec::same_3x3(1, 1, 1).effective_kernel(), 3);
        assert_eq!(Conv2dSpec::same_3x3(1, 1, 2).effective_kernel(), 5);
        assert_eq!(Conv2dSpec::same_3x3(1, 1, 3).effective_kernel(), 7);
    }

    #[test]
    fn padded_dilated_conv_preserves_extent() {
        let spec = Conv2dSpec::same_3x3(3, 4, 4);
        assert_eq!(spec.effective_kernel(), 9);
        assert_eq!(spec.output_extent(75).unwrap(), 75);
    }

    #[test]
    fn channel_mismatch_and_oversized_kernel_fail() {
        let mut tape = Tape::<f32>::new();
        let spec = Conv2dSpec::same_3x3(2, 1, 1);
        let x = tape.constant(Tensor::zeros(&[1, 3, 5, 5]));
        let w = tape.constant(Tensor::zeros(&spec.weight_shape()));
        let b = tape.constant(Tensor::zeros(&[1]));
        assert!(conv2d(&mut tape, x, w, b, &spec).is_err());

        let tight = Conv2dSpec {
            padding: 0,
            ..Conv2dSpec::same_3x3(3, 1, 4)
        };
        let w = tape.constant(Tensor::zeros(&tight.weight_shape()));
        assert!(conv2d(&mut tape, x, w, b, &tight).is_err());
    }

    #[test]
    fn valid_range_bounds() {
        // offset -2, stride 1, extent 5, 5 outputs: o in [2, 5)
        assert_eq!(valid_range(-2, 1, 5, 5), (2, 5));
        // offset 2: o + 2 < 5 => o < 3
        assert_eq!(valid_range(2, 1, 5, 5), (0, 3));
        // stride 2, offset -1, extent 5, 3 outputs: 2o-1 in [0,5) => o in [1,3)
        assert_eq!(valid_range(-1, 2, 5, 3), (1, 3));
        assert_eq!(valid_range(9, 1, 5, 5), (0, 0));
    }

    #[test]
    fn impulse_through_single_tap_kernel() {
        // one nonzero weight at tap (2,2) of a d=2 kernel shifts by +2*(2-1)-2 = 0
        let spec = Conv2dSpec::same_3x3(1, 1, 2);
        let mut w = Tensor::<f64>::zeros(&spec.weight_shape());
        w.data_mut()[8] = 3.0; // tap (i=2, j=2)
        let mut x = Tensor::<f64>::zeros(&[1, 1, 7, 7]);
        x.data_mut()[3 * 7 + 3] = 1.0;
        let y = conv2d_forward(&x, &w, &Tensor::zeros(&[1]), &spec).unwrap();
        // out[y,x] = w * x[y + 2*2 - 2, x + 2] => impulse at (1,1)
        for (idx, &v) in y.data().iter().enumerate() {
            let want = if idx == 7 + 1 { 3.0 } else { 0.0 };
            assert_eq!(v, want, "index {}", idx);
        }
    }
}
