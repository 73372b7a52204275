//! Central finite-difference gradient checking.

use std::fmt;

use rand::{Rng, SeedableRng};
use serde::Serialize;

use crate::error::{contract_err, Result};
use crate::scalar::DType;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const REL_TOLERANCE: f64 = 1e-4;
pub const ABS_FLOOR: f64 = 1e-6;

/// Central-difference estimate `(f(x + h e_i) - f(x - h e_i)) / 2h` for every
/// coordinate of `x`.
pub fn finite_diff_grad(f: impl FnMut(&Tensor<f64>) -> f64, x: &Tensor<f64>, step: f64) -> Result<Tensor<f64>> {
    let coords: Vec<usize> = (0..x.len()).collect();
    let values = finite_diff_at(f, x, step, &coords)?;
    Tensor::new(x.shape(), values)
}

/// Central differences at selected flat coordinates only.
pub fn finite_diff_at(mut f: impl FnMut(&Tensor<f64>) -> f64, x: &Tensor<f64>, step: f64, coords: &[usize]) -> Result<Vec<f64>> {
    let mut probe = x.clone();
    coords
        .iter()
        .map(|&i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + step;
            let plus = f(&probe);
            probe.data_mut()[i] = orig - step;
            let minus = f(&probe);
            probe.data_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(contract_err!("non-finite function value while perturbing coordinate {}", i));
            }
            Ok((plus - minus) / (2.0 * step))
        })
        .collect()
}

/// `|a - n| / max(|a|, |n|, ABS_FLOOR / REL_TOLERANCE)`; at most the tolerance
/// exactly when `|a - n| <= max(REL_TOLERANCE * max(|a|, |n|), ABS_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(ABS_FLOOR / REL_TOLERANCE);
    (analytic - numeric).abs() / scale
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Coordinate {
    pub instance: usize,
    pub input: usize,
    pub index: usize,
}

/// Outcome of checking one operation over several random instances.
#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub op: String,
    pub max_rel_error: f64,
    /// Worst coordinate, reported only when the check fails.
    pub failing: Option<Coordinate>,
    pub step: f64,
    pub dtype: DType,
    pub tolerance: f64,
    pub instances: usize,
    pub coordinates: usize,
    /// Coordinates whose probes straddled a ReLU kink and were not compared.
    pub skipped: usize,
}

impl GradCheckReport {
    /// Column titles matching the `Display` layout.
    pub fn header() -> String {
        format!("{:<28} {:>4} {:>7} {:>4} {:>11} status", "op", "runs", "coords", "skip", "max rel")
    }

    /// Within tolerance, with at most a tenth of the probes lost to kinks.
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance && self.skipped * 10 <= self.coordinates
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<28} {:>4} {:>7} {:>4} {:>11.3e} {}",
            self.op,
            self.instances,
            self.coordinates,
            self.skipped,
            self.max_rel_error,
            if self.passed() { "ok" } else { "FAIL" }
        )?;
        if let Some(c) = self.failing {
            write!(f, " (instance {}, input {}, index {})", c.instance, c.input, c.index)?;
        }
        Ok(())
    }
}

type Forward = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

/// One random instance of an operation under test.
pub struct Case {
    pub inputs: Vec<Tensor<f64>>,
    /// Indices of `inputs` that are differentiated; the rest are constants.
    pub tracked: Vec<usize>,
    pub forward: Forward,
    /// At most this many coordinates per input are perturbed (all when `None`).
    pub max_coords: Option<usize>,
}

impl Case {
    pub fn new(inputs: Vec<Tensor<f64>>, forward: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + 'static) -> Self {
        let tracked = (0..inputs.len()).collect();
        Case {
            inputs,
            tracked,
            forward: Box::new(forward),
            max_coords: None,
        }
    }

    pub fn tracked(mut self, tracked: &[usize]) -> Self {
        self.tracked = tracked.to_vec();
        self
    }

    pub fn max_coords(mut self, n: usize) -> Self {
        self.max_coords = Some(n);
        self
    }

    /// Output reduced to a scalar: scalars pass through, anything else is
    /// projected onto `weights`.
    fn loss(&self, tape: &mut Tape<f64>, inputs: &[Tensor<f64>], weights: Option<&Tensor<f64>>) -> Result<(Var, Vec<Var>)> {
        let vars: Vec<Var> = inputs
            .iter()
            .enumerate()
            .map(|(i, t)| {
                if self.tracked.contains(&i) {
                    tape.variable(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        let out = (self.forward)(tape, &vars)?;
        let loss = match weights {
            Some(w) if tape.value(out).len() != 1 => {
                let w = tape.constant(w.clone());
                let p = tape.mul(out, w)?;
                tape.sum(p)
            }
            _ if tape.value(out).len() == 1 => tape.reshape(out, &[])?,
            _ => return Err(contract_err!("projection weights missing for non-scalar output")),
        };
        Ok((loss, vars))
    }
}

/// Compares tape gradients with central differences over `instances` cases
/// drawn from `make`.
pub fn check_op(
    op: &str,
    instances: usize,
    seed: u64,
    mut make: impl FnMut(&mut crate::Rng) -> Case,
) -> Result<GradCheckReport> {
    let mut rng = crate::Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut worst_at = None;
    let mut coordinates = 0;
    let mut skipped = 0;
    for instance in 0..instances {
        let case = make(&mut rng);
        let mut shape_tape = Tape::new();
        let vars: Vec<Var> = case.inputs.iter().map(|t| shape_tape.constant(t.clone())).collect();
        let out = (case.forward)(&mut shape_tape, &vars)?;
        let out_shape = shape_tape.value(out).shape().to_vec();
        let weights = Tensor::from_fn(&out_shape, |_| rng.gen_range(-1.0..1.0));

        let mut tape = Tape::new();
        let (loss, vars) = case.loss(&mut tape, &case.inputs, Some(&weights))?;
        let grads = tape.backward(loss)?;

        for &input in &case.tracked {
            let analytic = grads
                .get(vars[input])
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(case.inputs[input].shape()));
            let n = case.inputs[input].len();
            let coords: Vec<usize> = match case.max_coords {
                Some(m) if m < n => (0..m).map(|_| rng.gen_range(0..n)).collect(),
                _ => (0..n).collect(),
            };
            let eval = |x: &Tensor<f64>| {
                let mut inputs = case.inputs.clone();
                inputs[input] = x.clone();
                let mut t = Tape::new();
                match case.loss(&mut t, &inputs, Some(&weights)) {
                    Ok((l, _)) => (t.value(l).item(), t.relu_pattern()),
                    Err(_) => (f64::NAN, Vec::new()),
                }
            };
            let mut probe = case.inputs[input].clone();
            for &i in &coords {
                let orig = probe.data()[i];
                probe.data_mut()[i] = orig + DEFAULT_STEP;
                let (plus, plus_pattern) = eval(&probe);
                probe.data_mut()[i] = orig - DEFAULT_STEP;
                let (minus, minus_pattern) = eval(&probe);
                probe.data_mut()[i] = orig;
                if plus_pattern != minus_pattern {
                    // the two probes straddle a ReLU kink; the difference
                    // quotient does not estimate the derivative there
                    skipped += 1;
                    continue;
                }
                let num = (plus - minus) / (2.0 * DEFAULT_STEP);
                let err = relative_error(analytic.data()[i], num);
                if err > worst || !err.is_finite() {
                    worst = if err.is_finite() { err } else { f64::INFINITY };
                    worst_at = Some(Coordinate { instance, input, index: i });
                }
            }
            coordinates += coords.len();
        }
    }
    Ok(GradCheckReport {
        op: op.to_string(),
        max_rel_error: worst,
        failing: if worst <= REL_TOLERANCE { None } else { worst_at },
        step: DEFAULT_STEP,
        dtype: DType::F64,
        tolerance: REL_TOLERANCE,
        instances,
        coordinates,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_sum_derivative() {
        let x = Tensor::new(&[2], vec![1.0, 2.0]).unwrap();
        let g = finite_diff_grad(|t| t.data().iter().map(|v| v * v).sum(), &x, DEFAULT_STEP).unwrap();
        assert!((g.data()[0] - 2.0).abs() < 1e-8);
        assert!((g.data()[1] - 4.0).abs() < 1e-8);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let x = Tensor::from_fn(&[3, 2], |i| i as f64);
        let g = finite_diff_grad(|_| 4.5, &x, DEFAULT_STEP).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_finite_values_are_reported() {
        let x = Tensor::from_fn(&[1], |_| 0.0);
        assert!(finite_diff_grad(|t| 1.0 / t.data()[0].abs().min(0.0), &x, DEFAULT_STEP).is_err());
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!(relative_error(1e-9, 5e-7) <= REL_TOLERANCE);
        assert!(relative_error(1.0, 1.001) > REL_TOLERANCE);
    }

    #[test]
    fn report_pass_iff_within_tolerance() {
        let report = check_op("matmul", 3, 1, |rng| {
            let a = Tensor::from_fn(&[2, 3], |_| rng.gen_range(-1.0..1.0));
            let b = Tensor::from_fn(&[3, 2], |_| rng.gen_range(-1.0..1.0));
            Case::new(vec![a, b], |t, v| t.matmul(v[0], v[1]))
        })
        .unwrap();
        assert!(report.passed(), "{}", report);
        assert_eq!(report.coordinates, 3 * 12);
    }
}
