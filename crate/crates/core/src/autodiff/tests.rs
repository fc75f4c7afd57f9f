use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Direct convolution over an explicitly zero-padded copy of the input.
fn conv_oracle(input: &Tensor, filters: &Tensor, dilation: usize) -> Tensor {
    let (g_n, c_n, t_n) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (y_n, k_n) = (filters.shape()[1], filters.shape()[3]);
    let pad = dilation * (k_n - 1);
    let mut out = Tensor::zeros(&[g_n, y_n, t_n]);
    for g in 0..g_n {
        let fg = if filters.shape()[0] == 1 { 0 } else { g };
        for y in 0..y_n {
            for t in 0..t_n {
                let mut acc = 0.0;
                for j in 0..k_n {
                    for c in 0..c_n {
                        // padded index of t - dilation * j
                        let padded = t + pad - dilation * j;
                        let x = if padded < pad {
                            0.0
                        } else {
                            input.get(&[g, c, padded - pad])
                        };
                        acc += filters.get(&[fg, y, c, j]) * x;
                    }
                }
                out.set(&[g, y, t], acc);
            }
        }
    }
    out
}

#[test]
fn conv_value_channel_two_taps() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(vec![1, 2, 3], vec![1.0, 2.0, 3.0, 1.0, 1.0, 1.0]).unwrap());
    let mut f = Tensor::zeros(&[1, 1, 2, 2]);
    // value channel at both taps
    f.set(&[0, 0, 0, 0], 1.0);
    f.set(&[0, 0, 0, 1], 1.0);
    let fv = g.constant(f);
    let y = g.grouped_causal_conv1d(x, fv, 1).unwrap();
    assert_eq!(g.value(y).data(), &[1.0, 3.0, 5.0]);
}

#[test]
fn conv_zero_filters_give_zero_output() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut g = Graph::new();
    let x = g.constant(random_tensor(&mut rng, &[3, 2, 9]));
    let f = g.constant(Tensor::zeros(&[3, 4, 2, 3]));
    let y = g.grouped_causal_conv1d(x, f, 2).unwrap();
    assert!(g.value(y).data().iter().all(|v| *v == 0.0));
}

#[test]
fn conv_receptive_field_is_dilation_times_k_minus_one_plus_one() {
    for (d, k, field) in [(1usize, 4usize, 4usize), (2, 4, 7)] {
        let t_n = 20;
        // impulse at t0; output nonzero exactly on [t0, t0 + d(k-1)]
        let t0 = 3;
        let mut input = Tensor::zeros(&[1, 1, t_n]);
        input.set(&[0, 0, t0], 1.0);
        let mut g = Graph::new();
        let x = g.constant(input);
        let f = g.constant(Tensor::full(&[1, 1, 1, k], 1.0));
        let y = g.grouped_causal_conv1d(x, f, d).unwrap();
        let nonzero: Vec<usize> = (0..t_n).filter(|t| g.value(y).data()[*t] != 0.0).collect();
        assert_eq!(nonzero.first(), Some(&t0));
        assert_eq!(nonzero.last().unwrap() - t0 + 1, field);
    }
}

#[test]
fn conv_matches_padded_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (d, k, t_n) in [(1, 3, 10), (3, 4, 7), (5, 2, 4), (2, 5, 30)] {
        let input = random_tensor(&mut rng, &[4, 3, t_n]);
        for fg in [4, 1] {
            let filters = random_tensor(&mut rng, &[fg, 5, 3, k]);
            let mut g = Graph::new();
            let x = g.constant(input.clone());
            let f = g.constant(filters.clone());
            let y = g.grouped_causal_conv1d(x, f, d).unwrap();
            let want = conv_oracle(&input, &filters, d);
            for (a, b) in g.value(y).data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }
}

#[test]
fn conv_rejects_mismatched_shapes() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[2, 3, 5]));
    let f = g.constant(Tensor::zeros(&[2, 1, 2, 2]));
    assert!(matches!(
        g.grouped_causal_conv1d(x, f, 1),
        Err(Error::Dimension(_))
    ));
    let f = g.constant(Tensor::zeros(&[3, 1, 3, 2]));
    assert!(matches!(
        g.grouped_causal_conv1d(x, f, 1),
        Err(Error::Dimension(_))
    ));
    let f = g.constant(Tensor::zeros(&[2, 1, 3, 2]));
    assert!(g.grouped_causal_conv1d(x, f, 0).is_err());
}

#[test]
fn pointwise_sum_and_identity() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(vec![3, 1], vec![1.0, 2.0, 3.0]).unwrap());
    let w = g.constant(Tensor::full(&[1, 3], 1.0));
    let b = g.constant(Tensor::zeros(&[1]));
    let y = g.pointwise_linear(x, w, b).unwrap();
    assert_eq!(g.value(y).data(), &[6.0]);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let input = random_tensor(&mut rng, &[4, 6]);
    let mut eye = Tensor::zeros(&[4, 4]);
    for i in 0..4 {
        eye.set(&[i, i], 1.0);
    }
    let x = g.constant(input.clone());
    let w = g.constant(eye);
    let b = g.constant(Tensor::zeros(&[4]));
    let y = g.pointwise_linear(x, w, b).unwrap();
    assert_eq!(g.value(y), &input);
}

#[test]
fn pointwise_bitwise_matches_per_column_matvec() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let input = random_tensor(&mut rng, &[5, 7]);
    let weight = random_tensor(&mut rng, &[3, 5]);
    let bias = random_tensor(&mut rng, &[3]);
    let mut g = Graph::new();
    let (x, w, b) = (
        g.constant(input.clone()),
        g.constant(weight.clone()),
        g.constant(bias.clone()),
    );
    let y = g.pointwise_linear(x, w, b).unwrap();
    for t in 0..7 {
        for z in 0..3 {
            let mut acc = 0.0;
            for p in 0..5 {
                acc += weight.get(&[z, p]) * input.get(&[p, t]);
            }
            let want = acc + bias.data()[z];
            assert_eq!(g.value(y).get(&[z, t]).to_bits(), want.to_bits());
        }
    }
}

#[test]
fn pointwise_rejects_column_mismatch() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[4, 3]));
    let w = g.constant(Tensor::zeros(&[2, 5]));
    let b = g.constant(Tensor::zeros(&[2]));
    assert!(matches!(g.pointwise_linear(x, w, b), Err(Error::Dimension(_))));
}

#[test]
fn elementwise_values() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_vec(vec![200.0, 0.001, 5.0]));
    let y = g.hardtanh(x, 1.0 / 48.0, 100.0).unwrap();
    assert_eq!(g.value(y).data(), &[100.0, 1.0 / 48.0, 5.0]);

    let x = g.constant(Tensor::from_vec(vec![-3.0, 3.0]));
    let y = g.relu(x);
    assert_eq!(g.value(y).data(), &[0.0, 3.0]);

    let x = g.constant(Tensor::from_vec(vec![0.5, 1.0, 7.25]));
    let l = g.log(x).unwrap();
    let e = g.exp(l);
    for (a, b) in g.value(e).data().iter().zip([0.5, 1.0, 7.25]) {
        assert!((a - b).abs() < 1e-14);
    }

    let bad = g.constant(Tensor::from_vec(vec![1.0, 0.0]));
    assert!(matches!(g.log(bad), Err(Error::Domain(_))));
}

#[test]
fn hardtanh_gradient_zero_outside_and_on_boundary() {
    let mut g = Graph::new();
    let x = g.param(Tensor::from_vec(vec![-1.0, 0.0, 0.5, 1.0, 2.0]));
    let y = g.hardtanh(x, 0.0, 1.0).unwrap();
    let s = g.sum(y);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[0.0, 0.0, 1.0, 0.0, 0.0]);
}

#[test]
fn structural_ops() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::full(&[4, 3], 1.0));
    let c = g.concat(&[a, b], 0).unwrap();
    assert_eq!(g.shape(c), &[6, 3]);
    assert_eq!(g.value(c).data()[5], 0.0);
    assert_eq!(g.value(c).data()[6], 1.0);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let z = g.constant(random_tensor(&mut rng, &[2, 5]));
    let r = g.broadcast_repeat(z, 1, 3).unwrap();
    assert_eq!(g.shape(r), &[2, 3, 5]);
    for i in 0..2 {
        for k in 0..3 {
            for t in 0..5 {
                assert_eq!(g.value(r).get(&[i, k, t]), g.value(z).get(&[i, t]));
            }
        }
    }

    let x = g.constant(Tensor::from_vec(vec![1.0, 2.0, 3.0, 99.0]));
    let m = g.masked_mean(x, &[1.0, 1.0, 1.0, 0.0]).unwrap();
    assert_eq!(g.value(m).item().unwrap(), 2.0);
    assert!(matches!(
        g.masked_mean(x, &[0.0; 4]),
        Err(Error::DegenerateMask(_))
    ));

    let bad = g.constant(Tensor::zeros(&[2, 4]));
    assert!(g.concat(&[a, bad], 0).is_err());
}

#[test]
fn concat_and_slice_layout() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::new(vec![2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let b = g.constant(Tensor::new(vec![2, 2, 2], (5..13).map(f64::from).collect()).unwrap());
    let c = g.concat(&[a, b], 1).unwrap();
    assert_eq!(
        g.value(c).data(),
        &[1.0, 2.0, 5.0, 6.0, 7.0, 8.0, 3.0, 4.0, 9.0, 10.0, 11.0, 12.0]
    );
    let back = g.slice(c, 1, 1, 2).unwrap();
    assert_eq!(g.value(back), g.value(b));
}

fn bn_fixture(rng: &mut ChaCha8Rng, b: usize, c: usize, t: usize, scale: f64) -> (Tensor, Vec<f64>) {
    let mut x = random_tensor(rng, &[b, c, t]);
    x.data_mut().iter_mut().for_each(|v| *v *= scale);
    let mask: Vec<f64> = (0..b * t)
        .map(|i| if i % t < t - 1 - (i / t) { 1.0 } else { 0.0 })
        .collect();
    (x, mask)
}

#[test]
fn batch_norm_train_standardizes_valid_positions() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for scale in [1.0, 1000.0] {
        let (x, mask) = bn_fixture(&mut rng, 3, 4, 8, scale);
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let gamma = g.constant(Tensor::full(&[4], 1.0));
        let beta = g.constant(Tensor::zeros(&[4]));
        let state = NormState::new(4);
        let (y, stats) = g
            .batch_norm(xv, gamma, beta, &mask, &state, Mode::Train)
            .unwrap();
        let stats = stats.unwrap();
        for c in 0..4 {
            let vals: Vec<f64> = (0..3)
                .flat_map(|b| (0..8).map(move |t| (b, t)))
                .filter(|(b, t)| mask[b * 8 + t] > 0.0)
                .map(|(b, t)| g.value(y).get(&[b, c, t]))
                .collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-9);
            // unit variance up to the epsilon floor
            let biased = stats.unbiased_var[c] * (n - 1.0) / n;
            assert!((var - biased / (biased + BN_EPSILON)).abs() < 1e-9);
            if scale > 1.0 {
                assert!((var - 1.0).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn batch_norm_constant_channel_is_zero() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::full(&[2, 1, 5], 3.5));
    let gamma = g.constant(Tensor::full(&[1], 1.0));
    let beta = g.constant(Tensor::zeros(&[1]));
    let (y, _) = g
        .batch_norm(x, gamma, beta, &[1.0; 10], &NormState::new(1), Mode::Train)
        .unwrap();
    assert!(g.value(y).data().iter().all(|v| *v == 0.0));
}

#[test]
fn batch_norm_eval_uses_running_statistics() {
    let mut state = NormState::new(2);
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, -3.0, 4.0]).unwrap());
    let gamma = g.constant(Tensor::from_vec(vec![2.0, 0.5]));
    let beta = g.constant(Tensor::from_vec(vec![0.1, -0.2]));
    assert!(matches!(
        g.batch_norm(x, gamma, beta, &[1.0, 1.0], &state, Mode::Eval),
        Err(Error::Contract(_))
    ));
    state.running_mean = vec![0.5, -1.0];
    state.running_var = vec![4.0, 0.25];
    state.updates = 1;
    let (y, stats) = g
        .batch_norm(x, gamma, beta, &[1.0, 1.0], &state, Mode::Eval)
        .unwrap();
    assert!(stats.is_none());
    let hand = |x: f64, mu: f64, v: f64, ga: f64, be: f64| (x - mu) / (v + 1e-5f64).sqrt() * ga + be;
    let want = [
        hand(1.0, 0.5, 4.0, 2.0, 0.1),
        hand(2.0, 0.5, 4.0, 2.0, 0.1),
        hand(-3.0, -1.0, 0.25, 0.5, -0.2),
        hand(4.0, -1.0, 0.25, 0.5, -0.2),
    ];
    for (a, b) in g.value(y).data().iter().zip(want) {
        assert!((a - b).abs() < 1e-14);
    }
}

#[test]
fn running_statistics_follow_momentum() {
    let mut state = NormState::new(1);
    state.update(&BatchStats {
        mean: vec![2.0],
        unbiased_var: vec![3.0],
        count: 4,
    });
    assert!((state.running_mean[0] - 0.2).abs() < 1e-15);
    assert!((state.running_var[0] - (0.9 + 0.3)).abs() < 1e-15);
}

#[test]
fn backward_linear_chain() {
    // loss = sum(W x) -> dW = outer(1, x)
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(vec![3, 1], vec![1.0, -2.0, 0.5]).unwrap());
    let w = g.param(Tensor::full(&[2, 3], 0.3));
    let b = g.param(Tensor::zeros(&[2]));
    let y = g.pointwise_linear(x, w, b).unwrap();
    let s = g.sum(y);
    g.backward(s).unwrap();
    assert_eq!(
        g.grad(w).unwrap().data(),
        &[1.0, -2.0, 0.5, 1.0, -2.0, 0.5]
    );
    assert_eq!(g.grad(b).unwrap().data(), &[1.0, 1.0]);
}

#[test]
fn backward_contracts() {
    let mut g = Graph::new();
    let x = g.param(Tensor::from_vec(vec![1.0, 2.0]));
    let lonely = g.param(Tensor::from_vec(vec![5.0]));
    let y = g.square(x);
    assert!(matches!(g.backward(y), Err(Error::Contract(_))));
    let s = g.sum(y);
    g.backward(s).unwrap();
    assert_eq!(g.grad(lonely).unwrap().data(), &[0.0]);
    assert!(matches!(g.backward(s), Err(Error::Contract(_))));
    g.zero_grad();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[2.0, 4.0]);
}

#[test]
fn gradcheck_simple_functions() {
    let err = finite_difference_check(
        |g, x| {
            let y = g.square(x);
            Ok(g.sum(y))
        },
        &Tensor::from_vec(vec![3.0]),
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-8, "{err}");
    let err = finite_difference_check(
        |g, x| {
            let y = g.hardtanh(x, -1.0, 1.0)?;
            Ok(g.sum(y))
        },
        &Tensor::from_vec(vec![0.3, -0.7]),
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-8, "{err}");
}

/// Scalar readout with non-uniform weights so every output element matters.
fn readout(g: &mut Graph, y: Var, seed: u64) -> crate::error::Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random_tensor(&mut rng, g.shape(y));
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

#[test]
fn gradcheck_every_primitive() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let h = 1e-5;
    let tol = 1e-4;

    let filters = random_tensor(&mut rng, &[3, 2, 2, 3]);
    let input = random_tensor(&mut rng, &[2, 3, 2, 9]);
    let f2 = filters.clone();
    let e = finite_difference_check(
        move |g, x| {
            let f = g.constant(f2.clone());
            let y = g.grouped_causal_conv1d(x, f, 2)?;
            readout(g, y, 11)
        },
        &input,
        h,
    )
    .unwrap();
    assert!(e < tol, "conv input {e}");
    let i2 = input.clone();
    let e = finite_difference_check(
        move |g, f| {
            let x = g.constant(i2.clone());
            let y = g.grouped_causal_conv1d(x, f, 2)?;
            readout(g, y, 11)
        },
        &filters,
        h,
    )
    .unwrap();
    assert!(e < tol, "conv filters {e}");
    let shared = random_tensor(&mut rng, &[1, 2, 2, 3]);
    let i3 = input.clone();
    let e = finite_difference_check(
        move |g, f| {
            let x = g.constant(i3.clone());
            let y = g.grouped_causal_conv1d(x, f, 1)?;
            readout(g, y, 12)
        },
        &shared,
        h,
    )
    .unwrap();
    assert!(e < tol, "shared conv filters {e}");

    let pin = random_tensor(&mut rng, &[2, 5, 7]);
    let pw = random_tensor(&mut rng, &[3, 5]);
    let pb = random_tensor(&mut rng, &[3]);
    for which in 0..3 {
        let (pin, pw, pb) = (pin.clone(), pw.clone(), pb.clone());
        let point = [&pin, &pw, &pb][which].clone();
        let e = finite_difference_check(
            move |g, v| {
                let x = if which == 0 { v } else { g.constant(pin.clone()) };
                let w = if which == 1 { v } else { g.constant(pw.clone()) };
                let b = if which == 2 { v } else { g.constant(pb.clone()) };
                let y = g.pointwise_linear(x, w, b)?;
                readout(g, y, 13)
            },
            &point,
            h,
        )
        .unwrap();
        assert!(e < tol, "pointwise arg {which}: {e}");
    }

    // keep clear of kinks and clip boundaries
    let mut pos = random_tensor(&mut rng, &[10]);
    pos.data_mut()
        .iter_mut()
        .for_each(|v| *v = v.signum() * (0.1 + v.abs()) + 2.0);
    for kind in [
        Unary::Relu,
        Unary::Exp,
        Unary::Log,
        Unary::Sigmoid,
        Unary::HardTanh { lo: 1.5, hi: 2.5 },
        Unary::Square,
        Unary::Scale(-1.7),
    ] {
        let e = finite_difference_check(
            move |g, x| {
                let y = g.unary(x, kind)?;
                readout(g, y, 14)
            },
            &pos,
            h,
        )
        .unwrap();
        assert!(e < tol, "{kind:?}: {e}");
    }

    let a = random_tensor(&mut rng, &[2, 3]);
    let b = random_tensor(&mut rng, &[4, 3]);
    let b2 = b.clone();
    let e = finite_difference_check(
        move |g, x| {
            let other = g.constant(b2.clone());
            let c = g.concat(&[x, other], 0)?;
            let r = g.broadcast_repeat(c, 1, 3)?;
            let f = g.flatten(r);
            let s = g.slice(f, 0, 4, 30)?;
            let sq = g.square(s);
            readout(g, sq, 15)
        },
        &a,
        h,
    )
    .unwrap();
    assert!(e < tol, "structural {e}");

    let mask = [1.0, 0.0, 1.0, 1.0, 0.0, 1.0];
    let e = finite_difference_check(
        move |g, x| {
            let sq = g.square(x);
            let f = g.flatten(sq);
            g.masked_mean(f, &mask)
        },
        &a,
        h,
    )
    .unwrap();
    assert!(e < tol, "masked_mean {e}");

    let e = finite_difference_check(
        |g, x| {
            let other = g.constant(Tensor::from_vec(vec![0.3, -1.2, 2.0]));
            let s = g.sub(x, other)?;
            let p = g.mul(s, x)?;
            let q = g.add(p, x)?;
            let m = g.mul_const(q, vec![1.0, 0.0, -2.0])?;
            let d = g.div_const(m, vec![0.7, 3.0, -1.5])?;
            Ok(g.sum(d))
        },
        &Tensor::from_vec(vec![0.4, 0.9, -0.1]),
        h,
    )
    .unwrap();
    assert!(e < tol, "binary {e}");

    let e = finite_difference_check(
        |g, x| {
            let p = g.sigmoid(x);
            let l = g.binary_cross_entropy(p, &[1.0, 0.0, 1.0])?;
            Ok(g.sum(l))
        },
        &Tensor::from_vec(vec![0.4, 0.9, -1.3]),
        h,
    )
    .unwrap();
    assert!(e < tol, "bce {e}");

    let (x, mask) = bn_fixture(&mut rng, 3, 2, 6, 1.0);
    let gamma = Tensor::from_vec(vec![1.3, 0.7]);
    let beta = Tensor::from_vec(vec![0.2, -0.1]);
    for which in 0..3 {
        let point = [&x, &gamma, &beta][which].clone();
        let (x, gamma, beta, mask) = (x.clone(), gamma.clone(), beta.clone(), mask.clone());
        let e = finite_difference_check(
            move |g, v| {
                let xv = if which == 0 { v } else { g.constant(x.clone()) };
                let ga = if which == 1 { v } else { g.constant(gamma.clone()) };
                let be = if which == 2 { v } else { g.constant(beta.clone()) };
                let (y, _) = g.batch_norm(xv, ga, be, &mask, &NormState::new(2), Mode::Train)?;
                readout(g, y, 16)
            },
            &point,
            h,
        )
        .unwrap();
        assert!(e < tol, "batch_norm arg {which}: {e}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn conv_is_causal(seed in 0u64..10_000, t0 in 0usize..12, dil in 1usize..4, k in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = random_tensor(&mut rng, &[3, 2, 12]);
        let filters = random_tensor(&mut rng, &[3, 2, 2, k]);
        let mut bumped = input.clone();
        for g in 0..3 { for c in 0..2 { bumped.set(&[g, c, t0], rng.random_range(-5.0..5.0)); } }
        let run = |inp: &Tensor| {
            let mut g = Graph::new();
            let x = g.constant(inp.clone());
            let f = g.constant(filters.clone());
            let y = g.grouped_causal_conv1d(x, f, dil).unwrap();
            g.value(y).clone()
        };
        let (a, b) = (run(&input), run(&bumped));
        for g in 0..3 { for y in 0..2 { for t in 0..t0 {
            prop_assert_eq!(a.get(&[g, y, t]).to_bits(), b.get(&[g, y, t]).to_bits());
        }}}
    }

    #[test]
    fn conv_groups_are_isolated(seed in 0u64..10_000, zeroed in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = random_tensor(&mut rng, &[4, 2, 10]);
        let filters = random_tensor(&mut rng, &[4, 3, 2, 3]);
        let mut cut = filters.clone();
        for y in 0..3 { for c in 0..2 { for j in 0..3 { cut.set(&[zeroed, y, c, j], 0.0); } } }
        let run = |f: &Tensor| {
            let mut g = Graph::new();
            let x = g.constant(input.clone());
            let f = g.constant(f.clone());
            let y = g.grouped_causal_conv1d(x, f, 2).unwrap();
            g.value(y).clone()
        };
        let (a, b) = (run(&filters), run(&cut));
        for g in 0..4 { for y in 0..3 { for t in 0..10 {
            if g == zeroed {
                prop_assert_eq!(b.get(&[g, y, t]), 0.0);
            } else {
                prop_assert_eq!(a.get(&[g, y, t]).to_bits(), b.get(&[g, y, t]).to_bits());
            }
        }}}
    }

    #[test]
    fn pointwise_is_time_local(seed in 0u64..10_000, t0 in 0usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = random_tensor(&mut rng, &[5, 8]);
        let w = random_tensor(&mut rng, &[3, 5]);
        let b = random_tensor(&mut rng, &[3]);
        let mut bumped = input.clone();
        for p in 0..5 { bumped.set(&[p, t0], rng.random_range(-5.0..5.0)); }
        let run = |inp: &Tensor| {
            let mut g = Graph::new();
            let (x, wv, bv) = (g.constant(inp.clone()), g.constant(w.clone()), g.constant(b.clone()));
            let y = g.pointwise_linear(x, wv, bv).unwrap();
            g.value(y).clone()
        };
        let (a, c) = (run(&input), run(&bumped));
        for z in 0..3 { for t in 0..8 { if t != t0 {
            prop_assert_eq!(a.get(&[z, t]).to_bits(), c.get(&[z, t]).to_bits());
        }}}
    }

    #[test]
    fn flatten_reshape_round_trip(dims in proptest::collection::vec(1usize..5, 1..5), seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = random_tensor(&mut rng, &dims);
        let mut g = Graph::new();
        let x = g.constant(t.clone());
        let f = g.flatten(x);
        let back = g.reshape(f, &dims).unwrap();
        prop_assert_eq!(g.value(back), &t);
    }
}
