use dcmnet::numerics::{
    finite_diff_grad, max_relative_error, Activation, Conv2dSpec, Conv3dSpec, Tape, Tensor,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Naive sliding-window cross-correlation, accumulating in (ci, ki, kj) order.
fn conv2d_oracle(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
    let (ci_n, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (co_n, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (wd + 2 * pad - kw) / stride + 1;
    let mut out = Tensor::zeros(&[co_n, ho, wo]);
    for co in 0..co_n {
        for oh in 0..ho {
            for ow in 0..wo {
                let mut acc = b.at(&[co]);
                for ci in 0..ci_n {
                    for ki in 0..kh {
                        for kj in 0..kw {
                            let ih = (oh * stride + ki) as isize - pad as isize;
                            let iw = (ow * stride + kj) as isize - pad as isize;
                            if ih < 0 || iw < 0 || ih >= h as isize || iw >= wd as isize {
                                continue;
                            }
                            acc += x.at(&[ci, ih as usize, iw as usize]) * w.at(&[co, ci, ki, kj]);
                        }
                    }
                }
                out.set(&[co, oh, ow], acc);
            }
        }
    }
    out
}

fn conv3d_oracle(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
    let s = x.shape();
    let (ci_n, d, h, wd) = (s[0], s[1], s[2], s[3]);
    let ws = w.shape();
    let (co_n, kd, kh, kw) = (ws[0], ws[2], ws[3], ws[4]);
    let out_len = |n: usize, k: usize| (n + 2 * pad - k) / stride + 1;
    let (dd, ho, wo) = (out_len(d, kd), out_len(h, kh), out_len(wd, kw));
    let mut out = Tensor::zeros(&[co_n, dd, ho, wo]);
    let inside = |v: isize, n: usize| v >= 0 && v < n as isize;
    for co in 0..co_n {
        for od in 0..dd {
            for oh in 0..ho {
                for ow in 0..wo {
                    let mut acc = b.at(&[co]);
                    for ci in 0..ci_n {
                        for kz in 0..kd {
                            for ki in 0..kh {
                                for kj in 0..kw {
                                    let iz = (od * stride + kz) as isize - pad as isize;
                                    let ih = (oh * stride + ki) as isize - pad as isize;
                                    let iw = (ow * stride + kj) as isize - pad as isize;
                                    if !(inside(iz, d) && inside(ih, h) && inside(iw, wd)) {
                                        continue;
                                    }
                                    acc += x.at(&[ci, iz as usize, ih as usize, iw as usize])
                                        * w.at(&[co, ci, kz, ki, kj]);
                                }
                            }
                        }
                    }
                    out.set(&[co, od, oh, ow], acc);
                }
            }
        }
    }
    out
}

fn conv2d_value(x: &Tensor, w: &Tensor, b: &Tensor, spec: Conv2dSpec) -> Tensor {
    let mut tape = Tape::new();
    let (xv, wv, bv) = (tape.constant(x), tape.constant(w), tape.constant(b));
    let y = tape.conv2d(xv, wv, bv, spec).unwrap();
    tape.value(y).clone()
}

fn conv3d_value(x: &Tensor, w: &Tensor, b: &Tensor, spec: Conv3dSpec) -> Tensor {
    let mut tape = Tape::new();
    let (xv, wv, bv) = (tape.constant(x), tape.constant(w), tape.constant(b));
    let y = tape.conv3d(xv, wv, bv, spec).unwrap();
    tape.value(y).clone()
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = random(&[4, 5], &mut rng);
    let b = random(&[5, 2], &mut rng);

    let mut tape = Tape::new();
    let av = tape.leaf(&a, true);
    let bv = tape.constant(&b);
    let y = tape.matmul(av, bv).unwrap();
    let s = tape.sum(y).unwrap();
    let analytic = tape.backward(s).unwrap().wrt(av);

    let numeric = finite_diff_grad(
        |x| {
            let mut t = Tape::new();
            let (xv, bv) = (t.constant(x), t.constant(&b));
            let y = t.matmul(xv, bv).unwrap();
            t.value(y).sum()
        },
        &a,
        H,
    );
    let (err, _) = max_relative_error(analytic.data(), numeric.data());
    assert!(err <= 1e-6, "rel err {err}");
}

#[test]
fn softmax_matches_high_precision_values() {
    // e^x / Σe^x for x = [1, 2, 3], evaluated at 40 significant digits.
    let expected = [
        0.090_030_573_170_380_46,
        0.244_728_471_054_797_64,
        0.665_240_955_774_821_9,
    ];
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
    let y = tape.softmax(x, 0).unwrap();
    for (got, want) in tape.value(y).data().iter().zip(expected) {
        assert!((got - want).abs() < 1e-15, "{got} vs {want}");
    }
}

#[test]
fn elementwise_mul_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let a = random(&[3, 4], &mut rng);
    let b = random(&[3, 4], &mut rng);
    let mut tape = Tape::new();
    let (av, bv) = (tape.leaf(&a, true), tape.leaf(&b, true));
    let p = tape.mul(av, bv).unwrap();
    let q = tape.add(p, av).unwrap();
    let s = tape.sum(q).unwrap();
    let g = tape.backward(s).unwrap();

    let numeric_a = finite_diff_grad(
        |x| x.data().iter().zip(b.data()).map(|(x, y)| x * y + x).sum(),
        &a,
        H,
    );
    let numeric_b = finite_diff_grad(
        |y| a.data().iter().zip(y.data()).map(|(x, y)| x * y).sum(),
        &b,
        H,
    );
    assert!(max_relative_error(g.wrt(av).data(), numeric_a.data()).0 <= 1e-6);
    assert!(max_relative_error(g.wrt(bv).data(), numeric_b.data()).0 <= 1e-6);
}

#[test]
fn linear_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let x = random(&[8], &mut rng);
    let w = random(&[4, 8], &mut rng);
    let b = random(&[4], &mut rng);
    let probe = random(&[4], &mut rng);
    let loss = |x: &Tensor, w: &Tensor, b: &Tensor| {
        let mut t = Tape::new();
        let (xv, wv, bv, pv) = (
            t.constant(x),
            t.constant(w),
            t.constant(b),
            t.constant(&probe),
        );
        let y = t.linear(xv, wv, bv).unwrap();
        let y = t.activation(y, Activation::Tanh).unwrap();
        let y = t.mul(y, pv).unwrap();
        t.value(y).sum()
    };
    let mut tape = Tape::new();
    let (xv, wv, bv, pv) = (
        tape.leaf(&x, true),
        tape.leaf(&w, true),
        tape.leaf(&b, true),
        tape.constant(&probe),
    );
    let y = tape.linear(xv, wv, bv).unwrap();
    let y = tape.activation(y, Activation::Tanh).unwrap();
    let y = tape.mul(y, pv).unwrap();
    let s = tape.sum(y).unwrap();
    let g = tape.backward(s).unwrap();
    for (var, analytic, numeric) in [
        (xv, g.wrt(xv), finite_diff_grad(|t| loss(t, &w, &b), &x, H)),
        (wv, g.wrt(wv), finite_diff_grad(|t| loss(&x, t, &b), &w, H)),
        (bv, g.wrt(bv), finite_diff_grad(|t| loss(&x, &w, t), &b, H)),
    ] {
        let (err, _) = max_relative_error(analytic.data(), numeric.data());
        assert!(err <= 1e-6, "var {var:?}: rel err {err}");
    }
}

#[test]
fn conv2d_table_shape_and_identity_kernel() {
    let spec = Conv2dSpec::new(1, 64, 3, 3);
    assert_eq!(spec.output_shape(&[1, 11, 11]).unwrap(), [64, 9, 9]);

    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let x = random(&[1, 5, 5], &mut rng);
    let y = conv2d_value(
        &x,
        &Tensor::ones(&[1, 1, 1, 1]),
        &Tensor::zeros(&[1]),
        Conv2dSpec::new(1, 1, 1, 1),
    );
    assert_eq!(y, x);
}

#[test]
fn conv2d_matches_sliding_window_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let x = random(&[1, 5, 5], &mut rng);
    let w = random(&[2, 1, 3, 3], &mut rng);
    let b = random(&[2], &mut rng);
    let got = conv2d_value(&x, &w, &b, Conv2dSpec::new(1, 2, 3, 3));
    assert!(got.max_abs_diff(&conv2d_oracle(&x, &w, &b, 1, 0)) <= 1e-12);
}

#[test]
fn conv3d_table_shapes_and_oracle() {
    let c1 = Conv3dSpec::new(1, 8, 9, 3, 3);
    assert_eq!(c1.output_shape(&[1, 30, 11, 11]).unwrap(), [8, 22, 9, 9]);
    let c2 = Conv3dSpec::new(8, 16, 7, 3, 3);
    assert_eq!(c2.output_shape(&[8, 22, 9, 9]).unwrap(), [16, 16, 7, 7]);

    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let x = random(&[2, 5, 4, 4], &mut rng);
    let w = random(&[3, 2, 3, 2, 2], &mut rng);
    let b = random(&[3], &mut rng);
    let got = conv3d_value(&x, &w, &b, Conv3dSpec::new(2, 3, 3, 2, 2));
    assert!(got.max_abs_diff(&conv3d_oracle(&x, &w, &b, 1, 0)) <= 1e-12);
}

#[test]
fn conv_geometry_errors() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[1, 6, 6]));
    let w = tape.constant(Tensor::zeros(&[1, 1, 3, 3]));
    let b = tape.constant(Tensor::zeros(&[1]));
    assert!(tape
        .conv2d(x, w, b, Conv2dSpec::new(1, 1, 3, 3).with_stride(2))
        .is_err());
    let wbig = tape.constant(Tensor::zeros(&[1, 1, 7, 7]));
    assert!(tape
        .conv2d(x, wbig, b, Conv2dSpec::new(1, 1, 7, 7))
        .is_err());
}

fn conv_grad_check_2d(spec: Conv2dSpec, x_shape: &[usize], seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random(x_shape, &mut rng);
    let w = random(&spec.weight_shape(), &mut rng);
    let b = random(&[spec.out_channels], &mut rng);
    let out = spec.output_shape(x_shape).unwrap();
    let probe = random(&out, &mut rng);
    let f = |x: &Tensor, w: &Tensor, b: &Tensor| {
        let y = conv2d_value(x, w, b, spec);
        y.data()
            .iter()
            .zip(probe.data())
            .map(|(a, p)| a * p)
            .sum::<f64>()
    };
    let mut tape = Tape::new();
    let (xv, wv, bv, pv) = (
        tape.leaf(&x, true),
        tape.leaf(&w, true),
        tape.leaf(&b, true),
        tape.constant(&probe),
    );
    let y = tape.conv2d(xv, wv, bv, spec).unwrap();
    let y = tape.mul(y, pv).unwrap();
    let s = tape.sum(y).unwrap();
    let g = tape.backward(s).unwrap();
    [
        max_relative_error(
            g.wrt(xv).data(),
            finite_diff_grad(|t| f(t, &w, &b), &x, H).data(),
        )
        .0,
        max_relative_error(
            g.wrt(wv).data(),
            finite_diff_grad(|t| f(&x, t, &b), &w, H).data(),
        )
        .0,
        max_relative_error(
            g.wrt(bv).data(),
            finite_diff_grad(|t| f(&x, &w, t), &b, H).data(),
        )
        .0,
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

#[test]
fn conv2d_gradients_with_padding_and_stride() {
    assert!(conv_grad_check_2d(Conv2dSpec::new(2, 3, 3, 3), &[2, 6, 6], 1) <= 1e-6);
    assert!(conv_grad_check_2d(Conv2dSpec::new(2, 2, 3, 3).with_padding(1), &[2, 3, 3], 2) <= 1e-6);
    assert!(
        conv_grad_check_2d(
            Conv2dSpec::new(1, 2, 3, 3).with_stride(2).with_padding(1),
            &[1, 5, 5],
            3
        ) <= 1e-6
    );
}

#[test]
fn conv3d_gradients() {
    let spec = Conv3dSpec::new(2, 2, 3, 3, 3).with_padding(1);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let x = random(&[2, 4, 3, 3], &mut rng);
    let w = random(&spec.weight_shape(), &mut rng);
    let b = random(&[2], &mut rng);
    let out = spec.output_shape(x.shape()).unwrap();
    let probe = random(&out, &mut rng);
    let f = |x: &Tensor, w: &Tensor| {
        let y = conv3d_value(x, w, &b, spec);
        y.data()
            .iter()
            .zip(probe.data())
            .map(|(a, p)| a * p)
            .sum::<f64>()
    };
    let mut tape = Tape::new();
    let (xv, wv, bv, pv) = (
        tape.leaf(&x, true),
        tape.leaf(&w, true),
        tape.constant(&b),
        tape.constant(&probe),
    );
    let y = tape.conv3d(xv, wv, bv, spec).unwrap();
    let y = tape.mul(y, pv).unwrap();
    let s = tape.sum(y).unwrap();
    let g = tape.backward(s).unwrap();
    assert!(
        max_relative_error(
            g.wrt(xv).data(),
            finite_diff_grad(|t| f(t, &w), &x, H).data()
        )
        .0 <= 1e-6
    );
    assert!(
        max_relative_error(
            g.wrt(wv).data(),
            finite_diff_grad(|t| f(&x, t), &w, H).data()
        )
        .0 <= 1e-6
    );
}

/// Random composite graph touching every op; gradients vs finite differences
/// over 20 seeds.
#[test]
fn composite_graph_gradient_check_over_seeds() {
    fn graph(
        tape: &mut Tape<'_>,
        x: dcmnet::numerics::Var,
        w: dcmnet::numerics::Var,
        gate: dcmnet::numerics::Var,
    ) -> dcmnet::numerics::Var {
        let xt = tape.transpose(x).unwrap(); // 4x3
        let a = tape.matmul(x, xt).unwrap(); // 3x3
        let a = tape.scale(a, 0.5).unwrap();
        let sm = tape.softmax(a, 1).unwrap();
        let y = tape.matmul(sm, x).unwrap(); // 3x4
        let y = tape.linear(y, w, gate).unwrap(); // 3x3 (w: 3x4, bias len 3)
        let r = tape.activation(y, Activation::Tanh).unwrap();
        let g = tape.activation(gate, Activation::RestrictedTanh).unwrap();
        let rs = tape.reshape(r, &[9]).unwrap();
        let parts: Vec<_> = (0..3).map(|i| tape.scale_by(rs, g, i).unwrap()).collect();
        let sum = tape.add_all(&parts).unwrap();
        let sq = tape.mul(sum, sum).unwrap();
        let d = tape.sub(sq, rs).unwrap();
        tape.sum(d).unwrap()
    }
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let x = random(&[3, 4], &mut rng);
        let w = random(&[3, 4], &mut rng);
        // Keep gate pre-activations away from the kink at zero.
        let gate = Tensor::from_fn(&[3], |_| rng.random_range(0.1..1.0));
        let mut tape = Tape::new();
        let (xv, wv, gv) = (
            tape.leaf(&x, true),
            tape.leaf(&w, true),
            tape.leaf(&gate, true),
        );
        let l = graph(&mut tape, xv, wv, gv);
        let g = tape.backward(l).unwrap();
        let eval = |x: &Tensor, w: &Tensor, gate: &Tensor| {
            let mut t = Tape::new();
            let (xv, wv, gv) = (t.constant(x), t.constant(w), t.constant(gate));
            let l = graph(&mut t, xv, wv, gv);
            t.value(l).data()[0]
        };
        for (analytic, numeric) in [
            (g.wrt(xv), finite_diff_grad(|t| eval(t, &w, &gate), &x, H)),
            (g.wrt(wv), finite_diff_grad(|t| eval(&x, t, &gate), &w, H)),
            (g.wrt(gv), finite_diff_grad(|t| eval(&x, &w, t), &gate, H)),
        ] {
            let (err, _) = max_relative_error(analytic.data(), numeric.data());
            assert!(err <= 1e-4, "seed {seed}: rel err {err}");
        }
    }
}

#[test]
fn cross_entropy_gradient_is_softmax_minus_onehot() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let z = random(&[6], &mut rng);
    let mut tape = Tape::new();
    let zv = tape.leaf(&z, true);
    let l = tape.cross_entropy(zv, 2).unwrap();
    let g = tape.backward(l).unwrap().wrt(zv);
    let numeric = finite_diff_grad(
        |t| {
            let m = t.data().iter().copied().fold(f64::MIN, f64::max);
            let lse = m + t.data().iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            lse - t.data()[2]
        },
        &z,
        H,
    );
    assert!(max_relative_error(g.data(), numeric.data()).0 <= 1e-6);
}

#[test]
fn forward_is_bit_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let x = random(&[2, 6, 6], &mut rng);
    let w = random(&[3, 2, 3, 3], &mut rng);
    let b = random(&[3], &mut rng);
    let spec = Conv2dSpec::new(2, 3, 3, 3).with_padding(1);
    assert_eq!(
        conv2d_value(&x, &w, &b, spec),
        conv2d_value(&x, &w, &b, spec)
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_slices_sum_to_one(data in proptest::collection::vec(-50.0f64..50.0, 12), axis in 0usize..2) {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![3, 4], data).unwrap());
        let y = tape.softmax(x, axis).unwrap();
        let v = tape.value(y);
        prop_assert!(v.data().iter().all(|&p| p > 0.0));
        if axis == 1 {
            for r in 0..3 {
                let s: f64 = (0..4).map(|c| v.at(&[r, c])).sum();
                prop_assert!((s - 1.0).abs() <= 1e-6);
            }
        } else {
            for c in 0..4 {
                let s: f64 = (0..3).map(|r| v.at(&[r, c])).sum();
                prop_assert!((s - 1.0).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn restricted_tanh_range(x in -1e3f64..1e3) {
        let y = Activation::RestrictedTanh.apply(x);
        prop_assert!((0.0..1.0).contains(&y));
        prop_assert_eq!(y == 0.0, x <= 0.0);
    }

    #[test]
    fn conv2d_bit_exact_with_oracle(seed in 0u64..1000, c_in in 1usize..5, c_out in 1usize..3, hw in 3usize..17, pad in 0usize..2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&[c_in, hw, hw], &mut rng);
        let w = random(&[c_out, c_in, 3, 3], &mut rng);
        let b = random(&[c_out], &mut rng);
        let got = conv2d_value(&x, &w, &b, Conv2dSpec::new(c_in, c_out, 3, 3).with_padding(pad));
        prop_assert_eq!(got, conv2d_oracle(&x, &w, &b, 1, pad));
    }

    #[test]
    fn conv3d_bit_exact_with_oracle(seed in 0u64..1000, c_in in 1usize..3, dhw in 3usize..9, pad in 0usize..2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&[c_in, dhw, dhw, dhw], &mut rng);
        let w = random(&[2, c_in, 3, 3, 3], &mut rng);
        let b = random(&[2], &mut rng);
        let got = conv3d_value(&x, &w, &b, Conv3dSpec::new(c_in, 2, 3, 3, 3).with_padding(pad));
        prop_assert_eq!(got, conv3d_oracle(&x, &w, &b, 1, pad));
    }
}
