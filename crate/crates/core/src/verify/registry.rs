//! Every differentiable operation, layer and architecture with a random
//! instance generator for the gradient checker.

use rand::{Rng as _, SeedableRng};

use crate::error::{contract_err, Result};
use crate::models::{build_model, extract_objects, pair_features, ModelConfig, ModelKind, Session};
use crate::nn::{self, BatchNormState, Conv2dSpec, Mode};
use crate::tensor::Tensor;
use crate::verify::gradcheck::{check_op, Case, GradCheckReport};
use crate::Rng;

/// Names accepted by [`run_check`], in report order.
pub const CHECKS: &[&str] = &[
    "add",
    "sub",
    "mul",
    "scale",
    "relu",
    "mean",
    "matmul",
    "add_bias",
    "reshape",
    "permute",
    "concat",
    "slice",
    "gather_rows",
    "sum_axis",
    "linear",
    "conv2d",
    "conv2d_strided",
    "conv2d_dilated",
    "conv2d_pointwise",
    "batch_norm_train",
    "batch_norm_eval",
    "avg_pool2d",
    "global_avg_pool",
    "dropout",
    "softmax_cross_entropy",
    "extract_objects",
    "pair_features",
    "model_cnn_mlp",
    "model_cnn_rn",
    "model_densenet",
    "model_dilated_densenet",
];

/// Instances per check used by the default suite.
pub const DEFAULT_INSTANCES: usize = 20;

fn uniform(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Values bounded away from zero so a finite-difference step never crosses a
/// ReLU kink.
fn away_from_zero(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let v: f64 = rng.gen_range(0.05..1.0);
        if rng.gen_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

fn conv_case(rng: &mut Rng, spec: Conv2dSpec, extent: usize) -> Case {
    let x = uniform(rng, &[2, spec.in_channels, extent, extent]);
    let w = uniform(rng, &spec.weight_shape());
    let b = uniform(rng, &[spec.out_channels]);
    Case::new(vec![x, w, b], move |t, v| nn::conv2d(t, v[0], v[1], v[2], &spec))
}

fn model_case(rng: &mut Rng, kind: ModelKind) -> Case {
    let config = ModelConfig::small(kind, 12).with_dropout(0.25);
    let model = build_model::<f64>(&config, rng.gen()).expect("small config is valid");
    // jitter so zero-initialized biases do not park units exactly on a ReLU kink
    let mut inputs: Vec<Tensor<f64>> = model
        .params()
        .values()
        .iter()
        .map(|p| p.map(|v| v + rng.gen_range(-0.1..0.1)))
        .collect();
    let n_params = inputs.len();
    inputs.push(uniform(rng, &[2, 3, 12, 12]));
    inputs.push(Tensor::from_fn(&[3, 11], |_| if rng.gen_bool(0.3) { 1.0 } else { 0.0 }));
    let labels: Vec<usize> = (0..3).map(|_| rng.gen_range(0..10)).collect();
    let mask_seed: u64 = rng.gen();
    let tracked: Vec<usize> = (0..=n_params).collect();
    Case::new(inputs, move |t, v| {
        let mut model = model.clone();
        let mut mask_rng = Rng::seed_from_u64(mask_seed);
        let tape = std::mem::take(t);
        let mut s = Session::from_parts(tape, v[..n_params].to_vec(), Mode::Train, &mut mask_rng);
        let logits = model.forward(&mut s, v[n_params], v[n_params + 1], &[0, 1, 1]);
        *t = s.into_tape();
        nn::softmax_cross_entropy(t, logits?, &labels)
    })
    .tracked(&tracked)
    .max_coords(3)
}

fn make_case(name: &str, rng: &mut Rng) -> Result<Case> {
    let case = match name {
        "add" => Case::new(vec![uniform(rng, &[3, 4]), uniform(rng, &[3, 4])], |t, v| t.add(v[0], v[1])),
        "sub" => Case::new(vec![uniform(rng, &[3, 4]), uniform(rng, &[3, 4])], |t, v| t.sub(v[0], v[1])),
        "mul" => Case::new(vec![uniform(rng, &[3, 4]), uniform(rng, &[3, 4])], |t, v| t.mul(v[0], v[1])),
        "scale" => Case::new(vec![uniform(rng, &[5])], |t, v| Ok(t.scale(v[0], -2.5))),
        "relu" => Case::new(vec![away_from_zero(rng, &[4, 5])], |t, v| Ok(t.relu(v[0]))),
        "mean" => Case::new(vec![uniform(rng, &[2, 3])], |t, v| Ok(t.mean(v[0]))),
        "matmul" => Case::new(vec![uniform(rng, &[3, 4]), uniform(rng, &[4, 2])], |t, v| t.matmul(v[0], v[1])),
        "add_bias" => Case::new(vec![uniform(rng, &[4, 3]), uniform(rng, &[3])], |t, v| t.add_bias(v[0], v[1])),
        "reshape" => Case::new(vec![uniform(rng, &[2, 6])], |t, v| t.reshape(v[0], &[3, 4])),
        "permute" => Case::new(vec![uniform(rng, &[2, 3, 4])], |t, v| t.permute(v[0], &[2, 0, 1])),
        "concat" => Case::new(vec![uniform(rng, &[2, 1, 3]), uniform(rng, &[2, 2, 3])], |t, v| {
            t.concat(&[v[0], v[1]], 1)
        }),
        "slice" => Case::new(vec![uniform(rng, &[3, 5])], |t, v| t.slice(v[0], 1, 1, 3)),
        "gather_rows" => Case::new(vec![uniform(rng, &[3, 2, 2])], |t, v| t.gather_rows(v[0], &[2, 0, 2, 1])),
        "sum_axis" => Case::new(vec![uniform(rng, &[2, 3, 4])], |t, v| t.sum_axis(v[0], 1)),
        "linear" => Case::new(vec![uniform(rng, &[3, 4]), uniform(rng, &[4, 5]), uniform(rng, &[5])], |t, v| {
            nn::linear(t, v[0], v[1], v[2])
        }),
        "conv2d" => conv_case(rng, Conv2dSpec::same_3x3(2, 3, 1), 5),
        "conv2d_strided" => conv_case(
            rng,
            Conv2dSpec {
                in_channels: 2,
                out_channels: 2,
                kernel: 3,
                stride: 2,
                padding: 1,
                dilation: 1,
            },
            6,
        ),
        "conv2d_dilated" => conv_case(rng, Conv2dSpec::same_3x3(2, 2, 2), 6),
        "conv2d_pointwise" => conv_case(rng, Conv2dSpec::pointwise(3, 2), 4),
        "batch_norm_train" => Case::new(
            vec![uniform(rng, &[3, 2, 2, 2]), uniform(rng, &[2]), uniform(rng, &[2])],
            |t, v| {
                let mut state = BatchNormState::new(2);
                nn::batch_norm(t, v[0], v[1], v[2], &mut state, Mode::Train)
            },
        ),
        "batch_norm_eval" => {
            let mut state = BatchNormState::new(2);
            state.running_mean = uniform(rng, &[2]);
            state.running_var = Tensor::from_fn(&[2], |_| rng.gen_range(0.5..2.0));
            Case::new(
                vec![uniform(rng, &[2, 2, 3, 3]), uniform(rng, &[2]), uniform(rng, &[2])],
                move |t, v| nn::batch_norm(t, v[0], v[1], v[2], &mut state.clone(), Mode::Eval),
            )
        }
        "avg_pool2d" => Case::new(vec![uniform(rng, &[2, 2, 5, 5])], |t, v| nn::avg_pool2d(t, v[0], 2, 2)),
        "global_avg_pool" => Case::new(vec![uniform(rng, &[2, 3, 3, 2])], |t, v| nn::global_avg_pool(t, v[0])),
        "dropout" => {
            let seed: u64 = rng.gen();
            Case::new(vec![uniform(rng, &[4, 6])], move |t, v| {
                nn::dropout(t, v[0], 0.4, Mode::Train, &mut Rng::seed_from_u64(seed))
            })
        }
        "softmax_cross_entropy" => {
            let labels: Vec<usize> = (0..4).map(|_| rng.gen_range(0..5)).collect();
            let logits = Tensor::from_fn(&[4, 5], |_| rng.gen_range(-3.0..3.0));
            Case::new(vec![logits], move |t, v| nn::softmax_cross_entropy(t, v[0], &labels))
        }
        "extract_objects" => Case::new(vec![uniform(rng, &[2, 3, 2, 3])], |t, v| extract_objects(t, v[0])),
        "pair_features" => Case::new(vec![uniform(rng, &[2, 3, 2]), uniform(rng, &[2, 4])], |t, v| {
            pair_features(t, v[0], v[1])
        }),
        "model_cnn_mlp" => model_case(rng, ModelKind::CnnMlp),
        "model_cnn_rn" => model_case(rng, ModelKind::CnnRn),
        "model_densenet" => model_case(rng, ModelKind::DensenetMlp),
        "model_dilated_densenet" => model_case(rng, ModelKind::DilatedDensenetMlp),
        other => return Err(contract_err!("no gradient check named '{}'", other)),
    };
    Ok(case)
}

/// Runs one named check over `instances` random instances.
pub fn run_check(name: &str, instances: usize, seed: u64) -> Result<GradCheckReport> {
    // validate the name before drawing anything
    make_case(name, &mut Rng::seed_from_u64(seed))?;
    let mut failure = None;
    let report = check_op(name, instances, seed, |rng| match make_case(name, rng) {
        Ok(c) => c,
        Err(e) => {
            failure = Some(e);
            Case::new(vec![], |t, _| Ok(t.constant(Tensor::scalar(0.0))))
        }
    })?;
    match failure {
        Some(e) => Err(e),
        None => Ok(report),
    }
}

/// Runs every registered check; `filter` keeps names containing it.
pub fn run_all(instances: usize, seed: u64, filter: Option<&str>) -> Result<Vec<GradCheckReport>> {
    CHECKS
        .iter()
        .filter(|n| filter.is_none_or(|f| n.contains(f)))
        .enumerate()
        .map(|(k, name)| run_check(name, instances, seed.wrapping_add(k as u64)))
        .collect()
}
