use crate::error::{shape_err, Result};
use crate::nn::Conv2dSpec;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Direct evaluation of the dilated convolution sum, one output at a time.
pub fn naive_conv<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>, spec: &Conv2dSpec) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.len() != 4 || s[1] != spec.in_channels {
        return Err(shape_err!("naive_conv input {:?} for {:?}", s, spec));
    }
    if weight.shape() != spec.weight_shape() || bias.shape() != [spec.out_channels] {
        return Err(shape_err!("naive_conv parameters {:?}/{:?}", weight.shape(), bias.shape()));
    }
    let (n, c, h, w) = (s[0], s[1], s[2] as isize, s[3] as isize);
    let oh = spec.output_extent(s[2])?;
    let ow = spec.output_extent(s[3])?;
    let k = spec.kernel;
    let (st, d, p) = (spec.stride as isize, spec.dilation as isize, spec.padding as isize);
    let mut out = Tensor::zeros(&[n, spec.out_channels, oh, ow]);
    for b in 0..n {
        for o in 0..spec.out_channels {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = bias.at(&[o]);
                    for ci in 0..c {
                        for i in 0..k {
                            for j in 0..k {
                                let iy = y as isize * st + i as isize * d - p;
                                let ix = xo as isize * st + j as isize * d - p;
                                if iy < 0 || ix < 0 || iy >= h || ix >= w {
                                    continue;
                                }
                                acc += weight.at(&[o, ci, i, j]) * x.at(&[b, ci, iy as usize, ix as usize]);
                            }
                        }
                    }
                    let off = out.offset(&[b, o, y, xo]);
                    out.data_mut()[off] = acc;
                }
            }
        }
    }
    Ok(out)
}
