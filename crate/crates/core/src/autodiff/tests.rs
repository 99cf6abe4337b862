use super::check::{self, finite_diff_check, DEFAULT_EPS};
use super::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn t(shape: &[usize], v: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
}

#[test]
fn matmul_hand_example() {
    let mut g = Graph::new();
    let a = g.constant(t(&[2, 2], &[1., 2., 3., 4.]));
    let b = g.constant(t(&[2, 2], &[5., 6., 7., 8.]));
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.value(c).data(), &[19., 22., 43., 50.]);
}

#[test]
fn softmax_uniform() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[3]));
    let s = g.softmax(a).unwrap();
    for &v in g.value(s).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn conv1d_zero_signal() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[7, 3]));
    let w = g.constant(Tensor::uniform(&[3, 3, 5], -1.0, 1.0, &mut rng));
    let y = g.conv1d(x, w).unwrap();
    assert_eq!(g.shape(y), &[7, 5]);
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn conv1d_rejects_even_kernel_and_bad_channels() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[4, 3]));
    let w = g.constant(Tensor::zeros(&[2, 3, 1]));
    assert!(matches!(g.conv1d(x, w), Err(TensorError::Invalid { op: "conv1d", .. })));
    let w = g.constant(Tensor::zeros(&[3, 2, 1]));
    assert!(matches!(g.conv1d(x, w), Err(TensorError::ShapeMismatch { op: "conv1d", .. })));
}

#[test]
fn conv1d_matches_direct_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (tl, cin, cout, k) = (6, 2, 3, 3);
    let x = Tensor::uniform(&[tl, cin], -1.0, 1.0, &mut rng);
    let w = Tensor::uniform(&[k, cin, cout], -1.0, 1.0, &mut rng);
    let mut g = Graph::new();
    let (xv, wv) = (g.constant(x.clone()), g.constant(w.clone()));
    let y = g.conv1d(xv, wv).unwrap();
    for ti in 0..tl {
        for o in 0..cout {
            let mut s = 0.0;
            for kk in 0..k {
                let src = ti as isize + kk as isize - 1;
                if src < 0 || src >= tl as isize {
                    continue;
                }
                for i in 0..cin {
                    s += x.at(&[src as usize, i]) * w.at(&[kk, i, o]);
                }
            }
            assert!((g.value(y).at(&[ti, o]) - s).abs() < 1e-12);
        }
    }
}

#[test]
fn shape_mismatch_names_op_and_shapes() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2, 3]));
    let err = g.matmul(a, b).unwrap_err();
    assert_eq!(
        err,
        TensorError::ShapeMismatch {
            op: "matmul",
            lhs: vec![2, 3],
            rhs: vec![2, 3]
        }
    );
    assert!(err.to_string().contains("matmul"));
}

#[test]
fn square_gradient() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::scalar(3.0));
    let y = g.mul(x, x).unwrap();
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.wrt(x).item(), 6.0);
}

#[test]
fn mean_tanh_gradient_at_zero() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::zeros(&[4]));
    let y = g.tanh(x).unwrap();
    let m = g.mean(y).unwrap();
    let grads = g.backward(m).unwrap();
    assert_eq!(grads.wrt(x).data(), &[0.25; 4]);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::zeros(&[2]));
    let y = g.tanh(x).unwrap();
    assert_eq!(g.backward(y).unwrap_err(), TensorError::NonScalarLoss(vec![2]));
}

#[test]
fn unreachable_leaf_gets_zero_gradient() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::ones(&[3]));
    let unused = g.leaf(Tensor::ones(&[2, 2]));
    let s = g.sum(x).unwrap();
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.wrt(unused), &Tensor::zeros(&[2, 2]));
}

#[test]
fn fan_out_accumulates() {
    // y = sum(tanh(x)) + sum(3x) -> dy/dx = 1 - tanh² + 3
    let mut g = Graph::new();
    let x = g.leaf(t(&[2], &[0.5, -1.0]));
    let a = g.tanh(x).unwrap();
    let a = g.sum(a).unwrap();
    let b = g.scale(x, 3.0).unwrap();
    let b = g.sum(b).unwrap();
    let y = g.add(a, b).unwrap();
    let grads = g.backward(y).unwrap();
    for (gv, xv) in grads.wrt(x).data().iter().zip([0.5f64, -1.0]) {
        assert!((gv - (1.0 - xv.tanh().powi(2) + 3.0)).abs() < 1e-14);
    }
}

#[test]
fn two_layer_mlp_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let w1 = Tensor::uniform(&[5, 6], -1.0, 1.0, &mut rng);
    let w2 = Tensor::uniform(&[6, 2], -1.0, 1.0, &mut rng);
    let x = Tensor::uniform(&[4, 5], -1.0, 1.0, &mut rng);
    let err = finite_diff_check(
        |g, w| {
            let xv = g.constant(x.clone());
            let w2v = g.constant(w2.clone());
            let h = g.matmul(xv, w)?;
            let h = g.tanh(h)?;
            let o = g.matmul(h, w2v)?;
            g.cross_entropy(o, &[0, 1, 1, 0], None)
        },
        &w1,
        DEFAULT_EPS,
    );
    assert!(err < 1e-4, "relative error {err}");
}

#[test]
fn finite_diff_linear_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = Tensor::uniform(&[3, 4], -1.0, 1.0, &mut rng);
    assert!(finite_diff_check(|g, v| g.sum(v), &x, DEFAULT_EPS) <= 1e-9);
}

#[test]
fn finite_diff_mean_sigmoid() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = Tensor::uniform(&[5, 5], -2.0, 2.0, &mut rng);
    let e = finite_diff_check(
        |g, v| {
            let s = g.sigmoid(v)?;
            g.mean(s)
        },
        &x,
        1e-5,
    );
    assert!(e <= 1e-6, "{e}");
}

#[test]
fn finite_diff_reports_nan_as_failure() {
    let x = Tensor::ones(&[3]);
    let e = finite_diff_check(
        |g, v| {
            let nan = g.constant(Tensor::full(&[3], f64::NAN));
            let y = g.mul(v, nan)?;
            g.sum(y)
        },
        &x,
        DEFAULT_EPS,
    );
    assert!(e.is_nan());
    let report = check::CheckReport {
        name: "nan".into(),
        max_rel_err: e,
        tol: 1e-4,
    };
    assert!(!report.passed());
}

#[test]
fn grad_norm_of_sum_is_sqrt_n_with_zero_gradient() {
    let n = 7;
    let mut g = Graph::new();
    let c = g.leaf(Tensor::uniform(&[n], -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(0)));
    let d = g.sum(c).unwrap();
    let norm = g.grad_norm_graph(d, c).unwrap();
    assert!((g.value(norm).item() - (n as f64).sqrt()).abs() < 1e-12);
    let grads = g.backward(norm).unwrap();
    assert!(grads.wrt(c).data().iter().all(|&v| v == 0.0));
}

#[test]
fn grad_norm_of_half_square() {
    let x = t(&[3], &[0.3, -1.2, 2.0]);
    let mut g = Graph::new();
    let c = g.leaf(x.clone());
    let sq = g.mul(c, c).unwrap();
    let d = g.sum(sq).unwrap();
    let d = g.scale(d, 0.5).unwrap();
    let norm = g.grad_norm_graph(d, c).unwrap();
    let n = x.norm();
    assert!((g.value(norm).item() - n).abs() < 1e-12);
    let grads = g.backward(norm).unwrap();
    for (gv, xv) in grads.wrt(c).data().iter().zip(x.data()) {
        assert!((gv - xv / n).abs() < 1e-12);
    }
}

#[test]
fn grad_rejects_unsupported_op_on_path() {
    let mut g = Graph::new();
    let c = g.leaf(Tensor::ones(&[2, 3]));
    let s = g.softmax(c).unwrap();
    let d = g.sum(s).unwrap();
    assert_eq!(
        g.grad_norm_graph(d, c).unwrap_err(),
        TensorError::UnsupportedSecondOrder("softmax")
    );
}

#[test]
fn op_suite_passes() {
    for r in check::run_op_suite(0..10) {
        assert!(r.passed(), "{}: {}", r.name, r.max_rel_err);
    }
}

#[test]
fn second_order_suite_passes() {
    for r in check::run_second_order_suite(0..10) {
        assert!(r.passed(), "{}: {}", r.name, r.max_rel_err);
    }
}

#[test]
fn deterministic_values_and_gradients() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut g = Graph::new();
        let x = g.leaf(Tensor::uniform(&[4, 6], -1.0, 1.0, &mut rng));
        let w = g.leaf(Tensor::uniform(&[3, 6, 2], -1.0, 1.0, &mut rng));
        let y = g.conv1d(x, w).unwrap();
        let y = g.gaussian_noise_add(y, 0.3, &mut rng).unwrap();
        let y = g.tanh(y).unwrap();
        let s = g.mean(y).unwrap();
        let gr = g.backward(s).unwrap();
        (g.value(s).clone(), gr.wrt(x).clone(), gr.wrt(w).clone())
    };
    let (a, b) = (run(), run());
    assert!(a.0.bit_eq(&b.0) && a.1.bit_eq(&b.1) && a.2.bit_eq(&b.2));
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn softmax_rows_are_distributions(m in 1usize..6, n in 1usize..8, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut g = Graph::new();
            let x = g.constant(Tensor::uniform(&[m, n], -30.0, 30.0, &mut rng));
            let s = g.softmax(x).unwrap();
            for row in g.value(s).data().chunks(n) {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(row.iter().all(|&p| p >= 0.0));
            }
        }

        #[test]
        fn slice_then_pad_roundtrips(m in 1usize..5, n in 2usize..8, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Tensor::uniform(&[m, n], -1.0, 1.0, &mut rng);
            let mut g = Graph::new();
            let xv = g.constant(x.clone());
            let a = g.slice(xv, 1, 0, 1).unwrap();
            let b = g.slice(xv, 1, 1, n - 1).unwrap();
            let c = g.concat(&[a, b], 1).unwrap();
            prop_assert!(g.value(c).bit_eq(&x));
        }
    }
}
