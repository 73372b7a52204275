use std::collections::BTreeSet;

use crate::error::{contract_err, Result};
use crate::nn::{conv2d, Conv2dSpec};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// One stride-1 convolution in a probed stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProbeLayer {
    pub kernel: usize,
    pub dilation: usize,
}

impl ProbeLayer {
    pub fn new(kernel: usize, dilation: usize) -> Self {
        ProbeLayer { kernel, dilation }
    }

    fn reach(&self) -> usize {
        self.dilation * (self.kernel - 1) / 2
    }
}

/// Input offsets, relative to the probed output pixel, that influence it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReceptiveField {
    pub offsets: BTreeSet<(isize, isize)>,
}

impl ReceptiveField {
    /// Side length of the bounding square along rows.
    pub fn extent(&self) -> usize {
        let lo = self.offsets.iter().map(|o| o.0).min().unwrap_or(0);
        let hi = self.offsets.iter().map(|o| o.0).max().unwrap_or(-1);
        (hi - lo + 1).max(0) as usize
    }
}

/// Finds the receptive field of the centre output of a stack of stride-1,
/// same-padded convolutions by back-propagating a one-hot output gradient
/// through all-ones weights and collecting the nonzero input positions.
pub fn receptive_field_probe(stack: &[ProbeLayer]) -> Result<ReceptiveField> {
    if let Some(bad) = stack.iter().find(|l| l.kernel % 2 == 0 || l.kernel == 0 || l.dilation == 0) {
        return Err(contract_err!("probe needs odd kernels and positive dilation, got {:?}", bad));
    }
    let reach: usize = stack.iter().map(ProbeLayer::reach).sum();
    // room for the full field plus a border so no path touches padding
    let side = 2 * (2 * reach + 1) + 1;
    let centre = side / 2;

    let mut tape = Tape::<f64>::new();
    let input = tape.variable(Tensor::zeros(&[1, 1, side, side]));
    let mut h = input;
    for layer in stack {
        let spec = Conv2dSpec {
            in_channels: 1,
            out_channels: 1,
            kernel: layer.kernel,
            stride: 1,
            padding: layer.reach(),
            dilation: layer.dilation,
        };
        let w = tape.constant(Tensor::ones(&spec.weight_shape()));
        let b = tape.constant(Tensor::zeros(&[1]));
        h = conv2d(&mut tape, h, w, b, &spec)?;
    }
    let mut select = Tensor::zeros(&[1, 1, side, side]);
    select.data_mut()[centre * side + centre] = 1.0;
    let select = tape.constant(select);
    let picked = tape.mul(h, select)?;
    let loss = tape.sum(picked);
    let grads = tape.backward(loss)?;
    let g = grads.get(input).ok_or_else(|| contract_err!("probe input received no gradient"))?;
    let offsets = g
        .data()
        .iter()
        .enumerate()
        .filter(|(_, &v)| v != 0.0)
        .map(|(i, _)| ((i / side) as isize - centre as isize, (i % side) as isize - centre as isize))
        .collect();
    Ok(ReceptiveField { offsets })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_conv_sees_its_neighbourhood() {
        let rf = receptive_field_probe(&[ProbeLayer::new(3, 1)]).unwrap();
        assert_eq!(rf.offsets.len(), 9);
        assert_eq!(rf.extent(), 3);
    }

    #[test]
    fn dilation_two_spans_five() {
        let rf = receptive_field_probe(&[ProbeLayer::new(3, 2)]).unwrap();
        let want: BTreeSet<_> = [-2, 0, 2]
            .iter()
            .flat_map(|&a| [-2, 0, 2].map(move |b| (a, b)))
            .collect();
        assert_eq!(rf.offsets, want);
        assert_eq!(rf.extent(), 5);
    }

    #[test]
    fn even_kernel_rejected() {
        assert!(receptive_field_probe(&[ProbeLayer::new(2, 1)]).is_err());
    }
}
