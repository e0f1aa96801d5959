use alloc::vec;
use alloc::vec::Vec;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a[i * k + p] * b[p * n + j];
            }
            c[i * n + j] = s;
        }
    }
    c
}

#[test]
fn tensor_rejects_bad_shapes() {
    assert!(Tensor::new(&[2, 2], vec![1.0; 3]).is_err());
    assert!(Tensor::new(&[0, 2], vec![]).is_err());
    assert!(Tensor::new(&[], vec![]).is_err());
}

#[test]
fn matmul_identity_and_hand_case() {
    let mut g = Graph::new();
    let i2 = g.constant(Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let b = g.constant(Tensor::new(&[2, 2], vec![3.0, -1.0, 0.5, 7.0]).unwrap());
    let c = g.matmul(i2, b).unwrap();
    assert_eq!(g.value(c), &[3.0, -1.0, 0.5, 7.0]);

    let a = g.constant(Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap());
    let b = g.constant(Tensor::new(&[2, 1], vec![3.0, 4.0]).unwrap());
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.shape(c), &[1, 1]);
    assert_eq!(g.value(c), &[11.0]);
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = random(&[4, 5], &mut rng);
    let b = random(&[5, 3], &mut rng);
    let expect = naive_matmul(a.data(), b.data(), 4, 5, 3);
    let mut g = Graph::new();
    let (va, vb) = (g.constant(a), g.constant(b));
    let c = g.matmul(va, vb).unwrap();
    for (x, y) in g.value(c).iter().zip(&expect) {
        assert!((x - y).abs() <= 1e-12);
    }
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]).unwrap());
    let b = g.constant(Tensor::zeros(&[2, 3]).unwrap());
    let err = g.matmul(a, b).unwrap_err();
    assert_eq!(
        err,
        TensorError::Shape {
            op: "matmul",
            lhs: vec![2, 3],
            rhs: vec![2, 3]
        }
    );
    let msg = alloc::format!("{err}");
    assert!(msg.contains("[2, 3] vs [2, 3]"), "{msg}");
}

#[test]
fn softmax_xent_uniform_logits() {
    let mut g = Graph::new();
    let l = g.constant(Tensor::filled(&[2, 4], 0.3).unwrap());
    let loss = g.softmax_xent(l, &[Some(1), Some(3)]).unwrap();
    assert!((g.value(loss)[0] - libm::log(4.0)).abs() < 1e-12);
    for p in g.softmax_probs(loss).unwrap() {
        assert!((p - 0.25).abs() < 1e-12);
    }
}

#[test]
fn softmax_xent_saturates() {
    let mut g = Graph::new();
    let l = g.constant(Tensor::new(&[1, 3], vec![0.0, 1000.0, 0.0]).unwrap());
    let loss = g.softmax_xent(l, &[Some(1)]).unwrap();
    assert!(g.value(loss)[0].abs() < 1e-12);
}

#[test]
fn softmax_xent_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let logits = random(&[3, 5], &mut rng);
    let targets = [Some(4), None, Some(0)];
    let mut direct = 0.0;
    let mut n = 0.0;
    for (r, t) in targets.iter().enumerate() {
        if let Some(t) = t {
            let row = &logits.data()[r * 5..(r + 1) * 5];
            let z: f64 = row.iter().map(|v| libm::exp(*v)).sum();
            direct += -libm::log(libm::exp(row[*t]) / z);
            n += 1.0;
        }
    }
    direct /= n;
    let mut g = Graph::new();
    let l = g.constant(logits);
    let loss = g.softmax_xent(l, &targets).unwrap();
    assert!((g.value(loss)[0] - direct).abs() < 1e-10);
}

#[test]
fn softmax_xent_all_ignored_is_an_error() {
    let mut g = Graph::new();
    let l = g.constant(Tensor::zeros(&[2, 3]).unwrap());
    assert_eq!(
        g.softmax_xent(l, &[None, None]).unwrap_err(),
        TensorError::NoSupervisedPositions
    );
}

#[test]
fn layer_norm_cases() {
    let mut g = Graph::new();
    let gain = g.constant(Tensor::filled(&[2], 1.0).unwrap());
    let bias = g.constant(Tensor::zeros(&[2]).unwrap());
    let x = g.constant(Tensor::new(&[2, 2], vec![3.0, 3.0, 1.0, -1.0]).unwrap());
    let y = g.layer_norm(x, gain, bias, 1e-12).unwrap();
    let v = g.value(y);
    assert_eq!(&v[..2], &[0.0, 0.0]);
    assert!((v[2] - 1.0).abs() < 1e-9 && (v[3] + 1.0).abs() < 1e-9);

    let bad = g.constant(Tensor::zeros(&[3]).unwrap());
    assert!(g.layer_norm(x, bad, bias, 1e-5).is_err());
}

#[test]
fn layer_norm_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random(&[1, 7], &mut rng);
    let gain = random(&[7], &mut rng);
    let bias = random(&[7], &mut rng);
    let eps = 1e-5;
    let row = x.data();
    let mean = row.iter().sum::<f64>() / 7.0;
    let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 7.0;
    let expect: Vec<f64> = (0..7)
        .map(|j| (row[j] - mean) / libm::sqrt(var + eps) * gain.data()[j] + bias.data()[j])
        .collect();
    let mut g = Graph::new();
    let (vx, vg, vb) = (g.constant(x), g.constant(gain), g.constant(bias));
    let y = g.layer_norm(vx, vg, vb, eps).unwrap();
    for (a, b) in g.value(y).iter().zip(&expect) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn backward_of_sum_is_ones() {
    let mut params = vec![Tensor::new(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap()];
    params[0].set_requires_grad(true);
    let mut g = Graph::new();
    let x = g.param(0, &params[0]);
    let s = g.sum(x);
    g.backward(s, &mut params).unwrap();
    assert_eq!(params[0].grad().unwrap(), &[1.0; 6]);
}

#[test]
fn backward_of_square() {
    let mut params = vec![Tensor::scalar(3.0)];
    params[0].set_requires_grad(true);
    let mut g = Graph::new();
    let x = g.param(0, &params[0]);
    let y = g.mul(x, x).unwrap();
    g.backward(y, &mut params).unwrap();
    assert_eq!(params[0].grad().unwrap(), &[6.0]);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut params = vec![Tensor::zeros(&[2]).unwrap()];
    params[0].set_requires_grad(true);
    let mut g = Graph::new();
    let x = g.param(0, &params[0]);
    assert_eq!(
        g.backward(x, &mut params).unwrap_err(),
        TensorError::NonScalarLoss(vec![2])
    );
}

#[test]
fn frozen_params_receive_no_gradient() {
    let mut params = vec![Tensor::scalar(2.0), Tensor::scalar(5.0)];
    params[0].set_requires_grad(true);
    let mut g = Graph::new();
    let a = g.param(0, &params[0]);
    let b = g.param(1, &params[1]);
    let y = g.mul(a, b).unwrap();
    g.backward(y, &mut params).unwrap();
    assert_eq!(params[0].grad().unwrap(), &[5.0]);
    assert!(params[1].grad().is_none());
}

#[test]
fn finite_diff_closed_forms() {
    let mut p = vec![Tensor::scalar(1.0)];
    p[0].set_requires_grad(true);
    let g = finite_diff_grad(|t| t[0].data()[0].powi(2), &mut p, 1e-4).unwrap();
    assert!((g[0][0] - 2.0).abs() < 1e-7);
    // the stencil is exact on quartics, where a two-point difference is off by 4h^2
    let g = finite_diff_grad(|t| t[0].data()[0].powi(4), &mut p, 1e-2).unwrap();
    assert!((g[0][0] - 4.0).abs() < 1e-10, "{}", g[0][0]);
    let g = finite_diff_grad(|_| 3.5, &mut p, 1e-4).unwrap();
    assert_eq!(g[0][0], 0.0);
    assert_eq!(p[0].data(), &[1.0]);
}

#[test]
fn finite_diff_errors() {
    let mut p = vec![Tensor::scalar(1.0)];
    assert_eq!(
        finite_diff_grad(|_| 0.0, &mut p, 1e-4).unwrap_err(),
        TensorError::NothingToCheck
    );
    p[0].set_requires_grad(true);
    assert!(matches!(
        finite_diff_grad(|_| f64::NAN, &mut p, 1e-4),
        Err(TensorError::NonFinite(_))
    ));
}

/// Builds a small network touching every op and returns its scalar loss.
fn every_op_loss(g: &mut Graph, p: &[Tensor], drop_rng: Option<&mut ChaCha8Rng>) -> Var {
    let (batch, seq, dim) = (2, 3, 4);
    let table = g.param(0, &p[0]);
    let x = g.embedding(table, &[1, 2, 0, 3, 3, 0]).unwrap();
    let w = g.param(1, &p[1]);
    let b = g.param(2, &p[2]);
    let h = g.matmul(x, w).unwrap();
    let h = g.add_bias(h, b).unwrap();
    let h = g.gelu(h);
    let gain = g.param(3, &p[3]);
    let beta = g.param(4, &p[4]);
    let h = g.layer_norm(h, gain, beta, 1e-5).unwrap();
    let h = g.dropout(h, 0.25, drop_rng);
    let layout = AttentionLayout {
        batch,
        seq,
        heads: 2,
    };
    let mask = [true, true, false, true, true, true];
    let q = g.matmul(h, w).unwrap();
    let a = g.attention(q, h, x, layout, &mask).unwrap();
    let r = g.add(a, h).unwrap();
    let t = g.tanh(r);
    let t2 = g.mul(t, r).unwrap();
    let logits = g.scale(t2, 1.7);
    assert_eq!(g.shape(logits), &[batch * seq, dim]);
    let rows = g.gather_rows(logits, &[0, 1, 3, 4, 5]).unwrap();
    g.softmax_xent(rows, &[Some(2), None, Some(0), Some(3), Some(1)])
        .unwrap()
}

fn every_op_params(seed: u64) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = vec![
        random(&[5, 4], &mut rng),
        random(&[4, 4], &mut rng),
        random(&[4], &mut rng),
        random(&[4], &mut rng),
        random(&[4], &mut rng),
    ];
    p.iter_mut().for_each(|t| t.set_requires_grad(true));
    p
}

#[test]
fn every_op_matches_central_differences() {
    let mut p = every_op_params(3);
    let mut g = Graph::new();
    let loss = every_op_loss(&mut g, &p, None);
    g.backward(loss, &mut p).unwrap();
    let analytic: Vec<Vec<f64>> = p.iter().map(|t| t.grad().unwrap().to_vec()).collect();
    let numeric = finite_diff_grad(
        |t| {
            let mut g = Graph::new();
            let l = every_op_loss(&mut g, t, None);
            g.value(l)[0]
        },
        &mut p,
        1e-3,
    )
    .unwrap();
    let report = compare_gradients(&analytic, &numeric, 1e-4);
    assert!(report.pass, "{report:?}");
}

#[test]
fn dropout_gradient_uses_the_same_mask() {
    let mut p = every_op_params(4);
    let mut g = Graph::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let loss = every_op_loss(&mut g, &p, Some(&mut rng));
    g.backward(loss, &mut p).unwrap();
    let analytic: Vec<Vec<f64>> = p.iter().map(|t| t.grad().unwrap().to_vec()).collect();
    let numeric = finite_diff_grad(
        |t| {
            let mut g = Graph::new();
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let l = every_op_loss(&mut g, t, Some(&mut rng));
            g.value(l)[0]
        },
        &mut p,
        1e-3,
    )
    .unwrap();
    assert!(compare_gradients(&analytic, &numeric, 1e-4).pass);
}

#[test]
fn dropout_eval_is_identity() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::filled(&[3], 2.0).unwrap());
    let y = g.dropout::<ChaCha8Rng>(x, 0.5, None);
    assert_eq!(x, y);
}

#[test]
fn two_backward_passes_double_the_gradient() {
    let mut p = every_op_params(8);
    let mut g = Graph::new();
    let loss = every_op_loss(&mut g, &p, None);
    g.backward(loss, &mut p).unwrap();
    let once: Vec<Vec<f64>> = p.iter().map(|t| t.grad().unwrap().to_vec()).collect();
    g.backward(loss, &mut p).unwrap();
    for (t, o) in p.iter().zip(&once) {
        for (a, b) in t.grad().unwrap().iter().zip(o) {
            assert_eq!(*a, 2.0 * b);
        }
    }
}

#[test]
fn attention_rows_sum_to_one_and_skip_masked_keys() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut g = Graph::new();
    let q = g.constant(random(&[6, 4], &mut rng));
    let k = g.constant(random(&[6, 4], &mut rng));
    let v = g.constant(random(&[6, 4], &mut rng));
    let mask = [true, true, false, true, false, false];
    let layout = AttentionLayout {
        batch: 2,
        seq: 3,
        heads: 2,
    };
    let a = g.attention(q, k, v, layout, &mask).unwrap();
    let probs = g.attention_probs(a).unwrap();
    for (r, row) in probs.chunks_exact(3).enumerate() {
        let b = r / 6;
        let s: f64 = row.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        for j in 0..3 {
            if !mask[b * 3 + j] {
                assert_eq!(row[j], 0.0);
            }
        }
    }
}

proptest! {
    #[test]
    fn softmax_rows_normalized_and_shift_invariant(
        vals in prop::collection::vec(-20.0f64..20.0, 12),
        shift in -50.0f64..50.0,
        t in 0usize..4,
    ) {
        let mut g = Graph::new();
        let l = g.constant(Tensor::new(&[3, 4], vals.clone()).unwrap());
        let loss = g.softmax_xent(l, &[Some(t), None, Some(3 - t)]).unwrap();
        for row in g.softmax_probs(loss).unwrap().chunks_exact(4) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let shifted: Vec<f64> = vals.iter().enumerate()
            .map(|(i, v)| if i < 4 { v + shift } else { *v })
            .collect();
        let l2 = g.constant(Tensor::new(&[3, 4], shifted).unwrap());
        let loss2 = g.softmax_xent(l2, &[Some(t), None, Some(3 - t)]).unwrap();
        prop_assert!((g.value(loss)[0] - g.value(loss2)[0]).abs() < 1e-9);
    }

    #[test]
    fn matmul_is_associative(seed in any::<u64>(), m in 1usize..5, k in 1usize..5, n in 1usize..5, p in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = Graph::new();
        let a = g.constant(random(&[m, k], &mut rng));
        let b = g.constant(random(&[k, n], &mut rng));
        let c = g.constant(random(&[n, p], &mut rng));
        let ab = g.matmul(a, b).unwrap();
        let ab_c = g.matmul(ab, c).unwrap();
        let bc = g.matmul(b, c).unwrap();
        let a_bc = g.matmul(a, bc).unwrap();
        for (x, y) in g.value(ab_c).iter().zip(g.value(a_bc)) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }
}
