use ddlab::nn::{conv2d_forward, Conv2dSpec};
use ddlab::verify::naive_conv;
use ddlab::{Rng, Scalar, Tensor};
use proptest::prelude::*;
use rand::{Rng as _, SeedableRng};

fn uniform<T: Scalar>(shape: &[usize], rng: &mut Rng) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::of(rng.gen_range(-1.0..1.0)))
}

/// Random conv problem with inputs in [-1, 1]; returns (x, weight, bias, spec).
fn case<T: Scalar>(seed: u64, dilation: usize, stride: usize) -> (Tensor<T>, Tensor<T>, Tensor<T>, Conv2dSpec) {
    let mut rng = Rng::seed_from_u64(seed);
    let spec = Conv2dSpec {
        in_channels: rng.gen_range(1..5),
        out_channels: rng.gen_range(1..5),
        kernel: [1, 3, 3, 5][rng.gen_range(0..4)],
        stride,
        padding: rng.gen_range(0..=dilation),
        dilation,
    };
    let reach = spec.effective_kernel();
    let h = rng.gen_range(reach.max(2)..reach + 9);
    let w = rng.gen_range(reach.max(2)..reach + 9);
    let n = rng.gen_range(1..3);
    let x = uniform(&[n, spec.in_channels, h, w], &mut rng);
    // fan-in scaling keeps outputs at unit scale, as in a real layer
    let scale = T::of(1.0 / (spec.patch_len() as f64).sqrt());
    let wt = uniform::<T>(&spec.weight_shape(), &mut rng).map(|v| v * scale);
    let b = uniform(&[spec.out_channels], &mut rng);
    (x, wt, b, spec)
}

/// `|a - b| / max(1, |b|)`: absolute for unit-scale outputs, relative beyond,
/// since an f32 output of magnitude 10 has an ulp above 1e-6.
fn scaled_diff(a: &Tensor<f32>, b: &Tensor<f32>) -> f32 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs() / y.abs().max(1.0))
        .fold(0.0, f32::max)
}

#[test]
fn hundred_f32_cases_match_within_1e6() {
    let mut worst = 0.0f32;
    for k in 0..100u64 {
        let d = [1, 2, 3, 4, 8][k as usize % 5];
        let s = 1 + (k as usize / 5) % 2;
        let (x, w, b, spec) = case::<f32>(k, d, s);
        let fast = conv2d_forward(&x, &w, &b, &spec).unwrap();
        let slow = naive_conv(&x, &w, &b, &spec).unwrap();
        assert_eq!(fast.shape(), slow.shape());
        worst = worst.max(scaled_diff(&fast, &slow));
    }
    println!("worst f32 difference {:e}", worst);
    assert!(worst <= 1e-6, "worst difference {}", worst);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn f64_agrees_to_1e12(seed in any::<u64>(), di in 0usize..5, stride in 1usize..3) {
        let (x, w, b, spec) = case::<f64>(seed, [1, 2, 3, 4, 8][di], stride);
        let fast = conv2d_forward(&x, &w, &b, &spec).unwrap();
        let slow = naive_conv(&x, &w, &b, &spec).unwrap();
        prop_assert!(fast.max_abs_diff(&slow) <= 1e-12);
    }
}

#[test]
fn delta_impulse_gives_shifted_scaled_impulse() {
    let spec = Conv2dSpec {
        in_channels: 1,
        out_channels: 1,
        kernel: 3,
        stride: 1,
        padding: 2,
        dilation: 2,
    };
    let mut x = Tensor::<f64>::zeros(&[1, 1, 9, 9]);
    x.data_mut()[4 * 9 + 4] = 1.0;
    // only the top-left tap is nonzero
    let mut w = Tensor::<f64>::zeros(&[1, 1, 3, 3]);
    w.data_mut()[0] = 3.0;
    let y = naive_conv(&x, &w, &Tensor::zeros(&[1]), &spec).unwrap();
    // output (i, j) reads input (i - 2 + 0, j - 2 + 0), so the impulse moves by +2
    for i in 0..9 {
        for j in 0..9 {
            let expected = if (i, j) == (6, 6) { 3.0 } else { 0.0 };
            assert_eq!(y.at(&[0, 0, i, j]), expected);
        }
    }
    assert_eq!(conv2d_forward(&x, &w, &Tensor::zeros(&[1]), &spec).unwrap(), y);
}

#[test]
fn dilation_matters_except_on_constant_input() {
    let (x, w, b, _) = case::<f64>(5, 1, 1);
    let spec = |d: usize| Conv2dSpec {
        in_channels: x.shape()[1],
        out_channels: w.shape()[0],
        kernel: w.shape()[2],
        stride: 1,
        padding: 0,
        dilation: d,
    };
    let x = uniform::<f64>(&[1, x.shape()[1], 15, 15], &mut Rng::seed_from_u64(1));
    let w = uniform::<f64>(&spec(1).weight_shape(), &mut Rng::seed_from_u64(2));
    let (y1, y2) = (naive_conv(&x, &w, &b, &spec(1)).unwrap(), naive_conv(&x, &w, &b, &spec(2)).unwrap());
    let k = spec(2).effective_kernel() - spec(1).effective_kernel();
    let e = y2.shape()[2];
    let crop = |t: &Tensor<f64>| -> Vec<f64> {
        let mut v = Vec::new();
        for c in 0..t.shape()[1] {
            for i in 0..e {
                for j in 0..e {
                    v.push(t.at(&[0, c, i, j]));
                }
            }
        }
        v
    };
    if k > 0 {
        assert_ne!(crop(&y1), crop(&y2));
    }
    let flat = Tensor::full(x.shape(), 0.7);
    let (c1, c2) = (naive_conv(&flat, &w, &b, &spec(1)).unwrap(), naive_conv(&flat, &w, &b, &spec(2)).unwrap());
    let (a, b) = (crop(&c1), crop(&c2));
    for (p, q) in a.iter().zip(&b) {
        assert!((p - q).abs() < 1e-12);
    }
}
