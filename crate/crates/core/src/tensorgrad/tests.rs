use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::Error;

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn conv_oracle(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: &Tensor<f64>,
    stride: usize,
    pad: usize,
) -> Vec<f64> {
    let [bn, cin, h, wd] = x.shape()[..] else { panic!() };
    let [cout, _, k, _] = w.shape()[..] else { panic!() };
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; bn * cout * ho * wo];
    for n in 0..bn {
        for o in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b.data()[o];
                    for c in 0..cin {
                        for i in 0..k {
                            for j in 0..k {
                                let iy = (oy * stride + i) as isize - pad as isize;
                                let ix = (ox * stride + j) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += x.data()[((n * cin + c) * h + iy as usize) * wd + ix as usize]
                                    * w.data()[((o * cin + c) * k + i) * k + j];
                            }
                        }
                    }
                    out[((n * cout + o) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    out
}

#[test]
fn conv_constant_window_sums() {
    let x = Tensor::<f64>::full(&[1, 1, 3, 3], 0.7);
    let w = Tensor::full(&[1, 1, 3, 3], 1.0);
    let b = Tensor::zeros(&[1]);
    let (y, _) = kernels::conv2d_forward(&x, &w, &b, 1, 0).unwrap();
    assert_eq!(y.shape(), &[1, 1, 1, 1]);
    assert!((y.data()[0] - 9.0 * 0.7).abs() < 1e-12);
}

#[test]
fn conv_identity_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_tensor(&[2, 1, 5, 4], &mut rng);
    let w = Tensor::full(&[1, 1, 1, 1], 1.0);
    let b = Tensor::zeros(&[1]);
    let (y, _) = kernels::conv2d_forward(&x, &w, &b, 1, 0).unwrap();
    assert_eq!(y, x);
}

#[test]
fn conv_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random_tensor(&[2, 3, 8, 8], &mut rng);
    let w = random_tensor(&[4, 3, 3, 3], &mut rng);
    let b = random_tensor(&[4], &mut rng);
    let (y, _) = kernels::conv2d_forward(&x, &w, &b, 1, 1).unwrap();
    assert_eq!(y.shape(), &[2, 4, 8, 8]);
    for (a, o) in y.data().iter().zip(conv_oracle(&x, &w, &b, 1, 1)) {
        assert!((a - o).abs() <= 1e-5);
    }
    // 32-bit path and a strided geometry
    let (y32, _) = kernels::conv2d_forward(&x.cast::<f32>(), &w.cast(), &b.cast(), 2, 1).unwrap();
    assert_eq!(y32.shape(), &[2, 4, 4, 4]);
    for (a, o) in y32.data().iter().zip(conv_oracle(&x, &w, &b, 2, 1)) {
        assert!((*a as f64 - o).abs() <= 1e-5);
    }
}

#[test]
fn conv_shape_errors() {
    let x = Tensor::<f64>::zeros(&[1, 2, 4, 4]);
    let b = Tensor::zeros(&[1]);
    let wrong_cin = Tensor::zeros(&[1, 3, 3, 3]);
    assert!(matches!(
        kernels::conv2d_forward(&x, &wrong_cin, &b, 1, 1),
        Err(Error::Dimension(_))
    ));
    let even = Tensor::zeros(&[1, 2, 2, 2]);
    assert!(kernels::conv2d_forward(&x, &even, &b, 1, 1).is_err());
    let mut g = Graph::new();
    let mut bad = Tensor::<f64>::zeros(&[1, 2, 4, 4]);
    bad.data_mut()[3] = f64::NAN;
    assert!(matches!(g.input(bad), Err(Error::Numeric { .. })));
}

fn bn_graph(x: Tensor<f64>, beta: f64, mode: Mode, stats: &mut BatchNormStats<f64>) -> crate::Result<Tensor<f64>> {
    let c = x.shape()[1];
    let mut g = Graph::new();
    let xv = g.input(x)?;
    let gamma = g.input(Tensor::full(&[c], 1.0))?;
    let beta = g.input(Tensor::full(&[c], beta))?;
    let y = g.batchnorm(xv, gamma, beta, stats, mode)?;
    Ok(g.value(y).clone())
}

#[test]
fn batchnorm_constant_input_gives_beta() {
    let x = Tensor::from_fn(&[3, 2, 2, 2], |i| if (i / 4) % 2 == 0 { 5.0 } else { -1.0 });
    let mut st = BatchNormStats::new(2);
    let y = bn_graph(x, 0.7, Mode::Train, &mut st).unwrap();
    assert!(y.data().iter().all(|&v| (v - 0.7).abs() < 1e-12));
    // running mean moved toward the batch means
    assert!((st.running_mean.data()[0] - 0.5).abs() < 1e-12);
    assert!((st.running_mean.data()[1] + 0.1).abs() < 1e-12);
}

#[test]
fn batchnorm_eval_identity_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_tensor(&[2, 3, 4, 4], &mut rng);
    let mut st = BatchNormStats::new(3);
    let y = bn_graph(x.clone(), 0.0, Mode::Eval, &mut st).unwrap();
    let scale = 1.0 / (1.0f64 + 1e-5).sqrt();
    for (a, b) in y.data().iter().zip(x.data()) {
        assert!((a - b * scale).abs() < 1e-12);
        assert!((a - b).abs() < 1e-5);
    }
    // eval mode is idempotent across calls and leaves stats alone
    let y2 = bn_graph(x, 0.0, Mode::Eval, &mut st).unwrap();
    assert_eq!(y, y2);
    assert_eq!(st, BatchNormStats::new(3));
}

fn two_pass_stats(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

#[test]
fn batchnorm_train_standardizes_channels() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = Tensor::from_fn(&[4, 3, 5, 5], |_| rng.random_range(-3.0..7.0));
    let mut st = BatchNormStats::new(3);
    let y = bn_graph(x, 0.0, Mode::Train, &mut st).unwrap();
    for c in 0..3 {
        let vals: Vec<f64> = (0..4)
            .flat_map(|b| y.data()[(b * 3 + c) * 25..(b * 3 + c + 1) * 25].to_vec())
            .collect();
        let (m, v) = two_pass_stats(&vals);
        assert!(m.abs() <= 1e-5);
        assert!((v - 1.0).abs() <= 1e-3);
    }
}

#[test]
fn batchnorm_train_rejects_single_sample() {
    let mut st = BatchNormStats::new(1);
    let err = bn_graph(Tensor::zeros(&[1, 1, 2, 2]), 0.0, Mode::Train, &mut st).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}

#[test]
fn activations() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::from_f64(&[3], &[-2.0, 0.0, 3.0]).unwrap()).unwrap();
    let r = g.relu(x).unwrap();
    assert_eq!(g.value(r).data(), &[0.0, 0.0, 3.0]);
    let z = g.input(Tensor::zeros(&[1])).unwrap();
    let s = g.sigmoid(z).unwrap();
    assert_eq!(g.value(s).data(), &[0.5]);
    let e = g.input(Tensor::zeros(&[1, 3])).unwrap();
    let sm = g.softmax(e).unwrap();
    for &v in g.value(sm).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
}

fn pool_oracle(x: &Tensor<f64>) -> Vec<f64> {
    let [b, c, h, w] = x.shape()[..] else { panic!() };
    let mut out = Vec::new();
    for p in 0..b * c {
        for oy in 0..h / 2 {
            for ox in 0..w / 2 {
                let mut m = f64::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        m = m.max(x.data()[p * h * w + (2 * oy + dy) * w + 2 * ox + dx]);
                    }
                }
                out.push(m);
            }
        }
    }
    out
}

#[test]
fn maxpool_cases() {
    let x = Tensor::<f64>::from_f64(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
    let (y, _) = kernels::maxpool2_forward(&x).unwrap();
    assert_eq!(y.data(), &[4.0]);

    let c = Tensor::<f64>::full(&[1, 2, 4, 6], 1.5);
    let (y, arg) = kernels::maxpool2_forward(&c).unwrap();
    assert_eq!(y.shape(), &[1, 2, 2, 3]);
    assert!(y.data().iter().all(|&v| v == 1.5));
    // ties route to the first index of each window
    assert_eq!(arg[0], 0);
    assert_eq!(arg[1], 2);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let r = random_tensor(&[1, 2, 6, 6], &mut rng);
    let (y, _) = kernels::maxpool2_forward(&r).unwrap();
    assert_eq!(y.data(), pool_oracle(&r).as_slice());

    let odd = Tensor::<f64>::zeros(&[1, 1, 3, 4]);
    assert!(matches!(kernels::maxpool2_forward(&odd), Err(Error::Dimension(_))));
}

#[test]
fn maxpool_tie_gradient_goes_to_first() {
    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::full(&[1, 1, 2, 2], 2.0)).unwrap();
    let y = g.maxpool2(x).unwrap();
    let s = g.sum(y).unwrap();
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn dropout_modes() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::full(&[1_000_000], 1.0)).unwrap();
    assert_eq!(g.dropout(x, 0.0, Mode::Train, &mut rng).unwrap(), x);
    assert_eq!(g.dropout(x, 0.9, Mode::Eval, &mut rng).unwrap(), x);
    assert!(matches!(g.dropout(x, 1.0, Mode::Train, &mut rng), Err(Error::Config(_))));
    let d = g.dropout(x, 0.5, Mode::Train, &mut rng).unwrap();
    let vals = g.value(d).data();
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    assert!((0.99..=1.01).contains(&mean), "mean {mean}");
    assert!(vals.iter().all(|&v| v == 0.0 || v == 2.0));
}

#[test]
fn linear_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random_tensor(&[4, 8], &mut rng);
    let eye = Tensor::from_fn(&[8, 8], |i| if i / 8 == i % 8 { 1.0 } else { 0.0 });
    let y = kernels::linear_forward(&x, &eye, &Tensor::zeros(&[8])).unwrap();
    assert_eq!(y, x);

    let bias = random_tensor(&[5], &mut rng);
    let y = kernels::linear_forward(&x, &Tensor::zeros(&[5, 8]), &bias).unwrap();
    for row in y.data().chunks(5) {
        assert_eq!(row, bias.data());
    }

    let w = random_tensor(&[5, 8], &mut rng);
    let y = kernels::linear_forward(&x, &w, &bias).unwrap();
    for b in 0..4 {
        for m in 0..5 {
            let mut acc = bias.data()[m];
            for n in 0..8 {
                acc += x.data()[b * 8 + n] * w.data()[m * 8 + n];
            }
            assert!((y.data()[b * 5 + m] - acc).abs() <= 1e-5);
        }
    }
    assert!(kernels::linear_forward(&x, &Tensor::zeros(&[5, 7]), &bias).is_err());
}

#[test]
fn global_avg_pool_cases() {
    let c = Tensor::<f64>::full(&[2, 3, 4, 4], -0.25);
    assert!(kernels::global_avg_pool(&c).unwrap().data().iter().all(|&v| v == -0.25));
    let x = Tensor::<f64>::from_f64(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(kernels::global_avg_pool(&x).unwrap().data(), &[2.5]);

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let r = random_tensor(&[2, 3, 5, 7], &mut rng);
    let y = kernels::global_avg_pool(&r).unwrap();
    for (i, plane) in r.data().chunks(35).enumerate() {
        let (m, _) = two_pass_stats(plane);
        assert!((y.data()[i] - m).abs() < 1e-14);
    }
}

#[test]
fn backward_simple_cases() {
    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::from_f64(&[3], &[0.1, 5.0, -2.0]).unwrap()).unwrap();
    let s = g.sum(x).unwrap();
    assert_eq!(g.backward(s).unwrap().get(x).unwrap().data(), &[1.0; 3]);

    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap()).unwrap();
    let sq = g.mul(x, x).unwrap();
    let s = g.sum(sq).unwrap();
    assert_eq!(g.backward(s).unwrap().get(x).unwrap().data(), &[2.0, 4.0]);
}

#[test]
fn shared_parameter_gradients_accumulate() {
    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::from_f64(&[2], &[3.0, -1.0]).unwrap()).unwrap();
    let a = g.add(x, x).unwrap();
    let b = g.add(a, x).unwrap();
    let s = g.sum(b).unwrap();
    assert_eq!(g.backward(s).unwrap().get(x).unwrap().data(), &[3.0, 3.0]);
}

#[test]
fn backward_usage_errors() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::zeros(&[2])).unwrap();
    let s = g.sum(x).unwrap();
    assert!(matches!(g.backward(s), Err(Error::Usage(_))));

    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::zeros(&[2])).unwrap();
    assert!(matches!(g.backward(x), Err(Error::Usage(_))));
}

fn bce(logits: &[f64], targets: &[f64]) -> f64 {
    let lo = PROB_CLAMP;
    logits
        .iter()
        .zip(targets)
        .map(|(&z, &y)| {
            let p = (1.0 / (1.0 + (-z).exp())).clamp(lo, 1.0 - lo);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum::<f64>()
        / logits.len() as f64
}

#[test]
fn focal_gamma_zero_is_bce() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let z = Tensor::from_fn(&[6, 5], |_| rng.random_range(-6.0..6.0));
        let y = Tensor::from_fn(&[6, 5], |_| if rng.random::<bool>() { 1.0 } else { 0.0 });
        let l = focal_loss_value(&z, &y, 0.0).unwrap();
        assert!((l - bce(z.data(), y.data())).abs() <= 1e-6);
    }
}

#[test]
fn bce_op_matches_reference_and_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let z = Tensor::from_fn(&[3, 5], |_| rng.random_range(-8.0..8.0));
    let y = Tensor::from_fn(&[3, 5], |_| if rng.random::<bool>() { 1.0 } else { 0.0 });
    let mut g = Graph::new();
    let v = g.input(z.clone()).unwrap();
    let l = g.bce_with_logits(v, &y).unwrap();
    assert!((g.value(l).data()[0] - bce(z.data(), y.data())).abs() <= 1e-9);
    let err = gradcheck(&z, |g, v| g.bce_with_logits(v, &y), 1e-5).unwrap();
    assert!(err <= 1e-6, "{err}");
    // no overflow far from zero
    let big = Tensor::<f64>::from_f64(&[1, 2], &[800.0, -800.0]).unwrap();
    let y = Tensor::from_f64(&[1, 2], &[0.0, 1.0]).unwrap();
    let mut g = Graph::new();
    let v = g.input(big).unwrap();
    let l = g.bce_with_logits(v, &y).unwrap();
    assert!((g.value(l).data()[0] - 800.0).abs() < 1e-9);
}

#[test]
fn focal_analytic_values() {
    // single element y = 1, p = 0.5, γ = 2
    let l = focal_loss_value(&Tensor::<f64>::zeros(&[1, 1]), &Tensor::full(&[1, 1], 1.0), 2.0).unwrap();
    assert!((l - 0.25 * std::f64::consts::LN_2).abs() <= 1e-6);
    assert!((l - 0.173287).abs() <= 1e-6);
    // perfect prediction: logit chosen so p = 1 − 1e-7
    let z = ((1.0 - 1e-7) / 1e-7f64).ln();
    let l = focal_loss_value(&Tensor::<f64>::full(&[1, 1], z), &Tensor::full(&[1, 1], 1.0), 2.0).unwrap();
    assert!((0.0..=1e-6).contains(&l));
}

#[test]
fn focal_rejects_soft_targets() {
    let err = focal_loss_value(&Tensor::<f64>::zeros(&[1, 5]), &Tensor::full(&[1, 5], 0.5), 2.0).unwrap_err();
    assert!(matches!(err, Error::Data(_)));
}

#[test]
fn gradcheck_sum_is_exact() {
    let x = Tensor::<f64>::from_f64(&[4], &[0.3, -1.0, 2.0, 0.0]).unwrap();
    let err = gradcheck(&x, |g, v| g.sum(v), 1e-5).unwrap();
    assert!(err < 1e-9, "{err}");
}

#[test]
fn gradcheck_non_scalar_is_usage_error() {
    let x = Tensor::<f64>::zeros(&[3]);
    assert!(matches!(gradcheck(&x, |g, v| g.relu(v), 1e-5), Err(Error::Usage(_))));
}

#[test]
fn gradcheck_focal_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let z = Tensor::from_fn(&[4, 5], |_| rng.random_range(-3.0..3.0));
    let y = Tensor::from_fn(&[4, 5], |_| if rng.random::<bool>() { 1.0 } else { 0.0 });
    for gamma in [0.0, 0.5, 2.0] {
        let err = gradcheck(&z, |g, v| g.focal_loss(v, &y, gamma), 1e-5).unwrap();
        assert!(err <= 1e-5, "gamma {gamma}: {err}");
    }
}

#[test]
fn gradcheck_conv_strides_and_padding() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for (stride, pad, side) in [(2, 1, 7), (2, 2, 6), (1, 0, 5), (3, 2, 8)] {
        let x = random_tensor(&[2, 2, side, side], &mut rng);
        let w = random_tensor(&[3, 2, 3, 3], &mut rng);
        let b = random_tensor(&[3], &mut rng);
        let (y, _) = kernels::conv2d_forward(&x, &w, &b, stride, pad).unwrap();
        for (a, o) in y.data().iter().zip(conv_oracle(&x, &w, &b, stride, pad)) {
            assert!((a - o).abs() < 1e-12);
        }
        let weights = random_tensor(y.shape(), &mut rng);
        let report = gradcheck_multi(
            &[x, w, b],
            |g, v| {
                let y = g.conv2d(v[0], v[1], v[2], stride, pad)?;
                let c = g.input(weights.clone())?;
                let y = g.mul(y, c)?;
                g.sum(y)
            },
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error <= 1e-6, "stride {stride} pad {pad}: {report:?}");
    }
}

#[test]
fn gradcheck_conv_bn_relu_chain() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random_tensor(&[2, 2, 5, 5], &mut rng);
    let w = random_tensor(&[3, 2, 3, 3], &mut rng);
    let b = random_tensor(&[3], &mut rng);
    let gamma = Tensor::from_fn(&[3], |_| rng.random_range(0.5..1.5));
    let beta = random_tensor(&[3], &mut rng);
    let mut stats = BatchNormStats::new(3);
    stats.running_mean = random_tensor(&[3], &mut rng);
    stats.running_var = Tensor::from_fn(&[3], |_| rng.random_range(0.5..2.0));
    let weights = random_tensor(&[2, 3, 5, 5], &mut rng);
    let report = gradcheck_multi(
        &[x, w, b, gamma, beta],
        |g, v| {
            let y = g.conv2d(v[0], v[1], v[2], 1, 1)?;
            let y = g.batchnorm(y, v[3], v[4], &mut stats, Mode::Eval)?;
            let y = g.relu(y)?;
            let c = g.input(weights.clone())?;
            let y = g.mul(y, c)?;
            g.sum(y)
        },
        1e-5,
    )
    .unwrap();
    assert!(report.max_rel_error <= 1e-5, "{report:?}");
}

#[test]
fn gradcheck_train_mode_batchnorm_and_pooling_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = random_tensor(&[3, 2, 4, 4], &mut rng);
    let gamma = Tensor::from_fn(&[2], |_| rng.random_range(0.5..1.5));
    let beta = random_tensor(&[2], &mut rng);
    let gate = random_tensor(&[3, 2], &mut rng);
    let alpha = random_tensor(&[3, 3], &mut rng);
    let w = random_tensor(&[3, 4], &mut rng);
    let bias = random_tensor(&[3], &mut rng);
    let weights = random_tensor(&[3, 2, 2, 2], &mut rng);
    let report = gradcheck_multi(
        &[x, gamma, beta, gate, alpha, w, bias],
        |g, v| {
            let mut st = BatchNormStats::new(2);
            let y = g.batchnorm(v[0], v[1], v[2], &mut st, Mode::Train)?;
            let y = g.channel_mul(y, v[3])?;
            let sm = g.softmax(v[4])?;
            let y = g.scale_by_column(y, sm, 1)?;
            let y = g.maxpool2(y)?;
            let c = g.input(weights.clone())?;
            let y1 = g.mul(y, c)?;
            let gap = g.global_avg_pool(y)?;
            let sel = g.select_channel(y, 1)?;
            let flat = g.flatten(sel)?;
            let cat = g.concat(&[gap, gap])?;
            let lin = g.linear(cat, v[5], v[6])?;
            let sg = g.sigmoid(lin)?;
            let a = g.sum(y1)?;
            let b = g.sum(sg)?;
            let fsq = g.mul(flat, flat)?;
            let c2 = g.sum(fsq)?;
            let ab = g.add(a, b)?;
            g.add(ab, c2)
        },
        1e-5,
    )
    .unwrap();
    assert!(report.max_rel_error <= 1e-5, "{report:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn conv_linear_gap_are_linear(seed in any::<u64>(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_tensor(&[1, 2, 6, 6], &mut rng);
        let y = random_tensor(&[1, 2, 6, 6], &mut rng);
        let combo = Tensor::new(x.shape().to_vec(), x.data().iter().zip(y.data()).map(|(p, q)| a * p + b * q).collect()).unwrap();
        let w = random_tensor(&[3, 2, 3, 3], &mut rng);
        let zb = Tensor::zeros(&[3]);
        let f = |t: &Tensor<f64>| kernels::conv2d_forward(t, &w, &zb, 1, 1).unwrap().0;
        let (fx, fy, fc) = (f(&x), f(&y), f(&combo));
        for i in 0..fc.numel() {
            prop_assert!((fc.data()[i] - (a * fx.data()[i] + b * fy.data()[i])).abs() < 1e-10);
        }
        let g = |t: &Tensor<f64>| kernels::global_avg_pool(t).unwrap();
        let (gx, gy, gc) = (g(&x), g(&y), g(&combo));
        for i in 0..gc.numel() {
            prop_assert!((gc.data()[i] - (a * gx.data()[i] + b * gy.data()[i])).abs() < 1e-10);
        }
        let lw = random_tensor(&[4, 72], &mut rng);
        let lb = Tensor::zeros(&[4]);
        let l = |t: &Tensor<f64>| kernels::linear_forward(&t.clone().reshape(&[1, 72]).unwrap(), &lw, &lb).unwrap();
        let (lx, ly, lc) = (l(&x), l(&y), l(&combo));
        for i in 0..lc.numel() {
            prop_assert!((lc.data()[i] - (a * lx.data()[i] + b * ly.data()[i])).abs() < 1e-10);
        }
    }

    #[test]
    fn softmax_sums_to_one_and_is_shift_invariant(vals in prop::collection::vec(-30.0f64..30.0, 1..8), shift in -50.0f64..50.0) {
        let n = vals.len();
        let t = Tensor::<f64>::from_f64(&[1, n], &vals).unwrap();
        let s = kernels::softmax_lastaxis(&t);
        prop_assert!((s.sum() - 1.0).abs() <= 1e-6);
        let shifted = kernels::softmax_lastaxis(&t.map(|v| v + shift));
        for (a, b) in s.data().iter().zip(shifted.data()) {
            prop_assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn focal_gamma_zero_matches_bce(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = Tensor::<f64>::from_fn(&[4, 5], |_| rng.random_range(-10.0..10.0));
        let y = Tensor::from_fn(&[4, 5], |_| if rng.random::<bool>() { 1.0 } else { 0.0 });
        let l = focal_loss_value(&z, &y, 0.0).unwrap();
        prop_assert!((l - bce(z.data(), y.data())).abs() <= 1e-6);
        prop_assert!(focal_loss_value(&z, &y, 2.0).unwrap() >= 0.0);
    }

    #[test]
    fn ops_are_bit_reproducible(seed in any::<u64>()) {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Tensor::<f32>::from_fn(&[2, 1, 6, 6], |_| rng.random_range(-1.0..1.0));
            let w = Tensor::<f32>::from_fn(&[2, 1, 3, 3], |_| rng.random_range(-1.0..1.0));
            let mut g = Graph::new();
            let xv = g.input(x).unwrap();
            let wv = g.param(w).unwrap();
            let bv = g.param(Tensor::zeros(&[2])).unwrap();
            let y = g.conv2d(xv, wv, bv, 1, 1).unwrap();
            let y = g.dropout(y, 0.3, Mode::Train, &mut rng).unwrap();
            let s = g.sum(y).unwrap();
            let val = g.value(s).data()[0];
            let grads = g.backward(s).unwrap();
            (val.to_bits(), grads.get(wv).unwrap().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        };
        prop_assert_eq!(run(), run());
    }
}
