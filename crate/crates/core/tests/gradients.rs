use lalign_core::linalg::Matrix;
use lalign_core::losses::{
    grad_check, loss_backward_mse, loss_combined_contrastive, loss_contrastive, loss_forward,
    loss_lambda_heaviside, loss_lambda_sigmoid, loss_orth, loss_total, Batch, LossWeights,
    Positives, TotalOptions,
};
use lalign_core::transforms::{Activation, AffineMap, MlpMap, OrthogonalMap, Transform};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TRIALS: u64 = 100;
const TOL: f64 = 1e-5;
/// Round-off and truncation error balance near here for O(1) losses; at
/// 1e-6 round-off alone reaches ~1e-9 absolute.
const DELTA: f64 = 1e-5;

fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn rand_labels(rng: &mut ChaCha8Rng, n: usize, classes: u32) -> Vec<u32> {
    // every class appears at least once
    let mut l: Vec<u32> = (0..n).map(|i| (i as u32) % classes).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        l.swap(i, j);
    }
    l
}

fn backward_map(rng: &mut ChaCha8Rng, kind: usize, n: usize) -> Transform {
    match kind {
        0 => OrthogonalMap::random(n, 0.5, rng).into(),
        _ => {
            let mut m = AffineMap::random(n, n, 0.5, rng);
            let mut p = m.params();
            for v in p.iter_mut().skip(n * n) {
                *v = rng.random_range(-0.5..0.5);
            }
            m.set_params(&p).unwrap();
            m.into()
        }
    }
}

fn forward_map(rng: &mut ChaCha8Rng, kind: usize, d: usize, k: usize) -> Transform {
    match kind {
        0 => AffineMap::random(d, k, 0.5, rng).into(),
        _ => {
            // nonzero biases keep outputs away from the origin, where
            // cosine normalization is not differentiable
            let mut m: Transform = MlpMap::two_layer(d, k, rng).into();
            let p: Vec<f64> = m
                .params()
                .iter()
                .map(|v| v + rng.random_range(-0.2..0.2))
                .collect();
            m.set_params(&p).unwrap();
            m
        }
    }
}

/// Smallest |pre-activation| over the hidden ReLU units. Finite differences
/// of width δ are only valid when no unit sits within δ of its kink.
fn relu_margin(map: &Transform, x: &Matrix) -> f64 {
    let Transform::Mlp(m) = map else {
        return f64::INFINITY;
    };
    let mut h = x.clone();
    let mut margin = f64::INFINITY;
    for (layer, act) in m.layers() {
        h = layer.apply(&h).unwrap();
        if *act == Activation::Relu {
            margin = h.data().iter().fold(margin, |m, v| m.min(v.abs()));
            h.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        }
    }
    margin
}

const KINK_MARGIN: f64 = 1e-3;

fn with_params(map: &Transform, p: &[f64]) -> Transform {
    let mut m = map.clone();
    m.set_params(p).unwrap();
    m
}

fn assert_small(name: &str, trial: u64, err: f64, tol: f64) {
    assert!(
        err <= tol,
        "{name} trial {trial}: relative error {err:e} > {tol:e}"
    );
}

#[test]
fn backward_mse_gradients() {
    for trial in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let n = rng.random_range(2..=8);
        let rows = rng.random_range(1..=6);
        let b = backward_map(&mut rng, (trial % 2) as usize, n);
        let new = rand_matrix(&mut rng, rows, n);
        let old = rand_matrix(&mut rng, rows, n);
        let err = grad_check(
            |p| loss_backward_mse(&with_params(&b, p), &new, &old).unwrap(),
            &b.params(),
            DELTA,
        );
        assert_small("L_B", trial, err, TOL);
    }
}

#[test]
fn single_pair_backward_mse() {
    let new = Matrix::from_rows(&[[1.0, 0.0]]);
    let old = Matrix::zeros(1, 2);
    for b in [
        Transform::from(AffineMap::identity(2)),
        OrthogonalMap::identity(2).into(),
    ] {
        assert_eq!(loss_backward_mse(&b, &new, &old).unwrap().0, 1.0);
        let err = grad_check(
            |p| loss_backward_mse(&with_params(&b, p), &new, &old).unwrap(),
            &b.params(),
            DELTA,
        );
        assert_small("L_B single", 0, err, TOL);
    }
}

#[test]
fn orth_gradients() {
    for trial in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
        let r = rng.random_range(1..=8);
        let c = rng.random_range(1..=8);
        let w = rand_matrix(&mut rng, r, c);
        let err = grad_check(
            |p| {
                let m = Matrix::from_vec(r, c, p.to_vec()).unwrap();
                let (v, g) = loss_orth(&m);
                (v, g.into_data())
            },
            w.data(),
            DELTA,
        );
        assert_small("L_orth", trial, err, TOL);
    }
}

#[test]
fn lambda_sigmoid_gradients() {
    for trial in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + trial);
        let n = rng.random_range(2..=8);
        let w = rand_matrix(&mut rng, n, n).scale(rng.random_range(0.3..1.5));
        let g = w.outer_gram_deviation().frobenius_norm();
        // keep the gate away from the threshold; that case is covered below
        let lambda = if trial % 2 == 0 {
            (g - rng.random_range(0.1..2.0)).max(0.0)
        } else {
            g + rng.random_range(0.1..0.5)
        };
        let alpha = rng.random_range(1.0..10.0);
        let err = grad_check(
            |p| {
                let (v, d) = loss_lambda_sigmoid(
                    &Matrix::from_vec(n, n, p.to_vec()).unwrap(),
                    lambda,
                    alpha,
                );
                (v, d.into_data())
            },
            w.data(),
            DELTA,
        );
        assert_small("L_lambda", trial, err, TOL);
    }
}

#[test]
fn lambda_sigmoid_gradients_near_threshold() {
    for trial in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + trial);
        let n = rng.random_range(2..=8);
        let w = rand_matrix(&mut rng, n, n);
        let g = w.outer_gram_deviation().frobenius_norm();
        let lambda = g + rng.random_range(-0.1..0.1);
        let err = grad_check(
            |p| {
                let (v, d) =
                    loss_lambda_sigmoid(&Matrix::from_vec(n, n, p.to_vec()).unwrap(), lambda, 10.0);
                (v, d.into_data())
            },
            w.data(),
            DELTA,
        );
        assert_small("L_lambda near threshold", trial, err, 1e-4);
    }
}

#[test]
fn forward_gradients_for_both_maps() {
    for trial in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(4000 + trial);
        let k = rng.random_range(2..=6);
        let d = rng.random_range(k..=8);
        let rows = rng.random_range(2..=6);
        let b = backward_map(&mut rng, ((trial / 2) % 2) as usize, k);
        let new = rand_matrix(&mut rng, rows, k);
        let (f, old) = loop {
            let f = forward_map(&mut rng, (trial % 2) as usize, d, k);
            let old = rand_matrix(&mut rng, rows, d);
            if relu_margin(&f, &old) > KINK_MARGIN {
                break (f, old);
            }
        };
        let nf = f.num_params();
        let mut theta = f.params();
        theta.extend(b.params());
        let err = grad_check(
            |p| {
                let (v, g) = loss_forward(
                    &with_params(&f, &p[..nf]),
                    &with_params(&b, &p[nf..]),
                    &old,
                    &new,
                )
                .unwrap();
                (v, [g.forward, g.backward].concat())
            },
            &theta,
            DELTA,
        );
        assert_small("L_F", trial, err, TOL);
    }
}

#[test]
fn contrastive_gradients_wrt_inputs() {
    for trial in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(5000 + trial);
        let d = rng.random_range(2..=8);
        let na = rng.random_range(1..=6);
        let nc = rng.random_range(na..=7);
        let classes = rng.random_range(1..=na as u32);
        let la = rand_labels(&mut rng, na, classes);
        let lc = rand_labels(&mut rng, nc, classes);
        let tau = rng.random_range(0.1..1.0);
        let a = rand_matrix(&mut rng, na, d);
        let c = rand_matrix(&mut rng, nc, d);
        let mut theta = a.data().to_vec();
        theta.extend_from_slice(c.data());
        let split = na * d;
        let pos = Positives::Labels {
            anchors: &la,
            candidates: &lc,
        };
        let err = grad_check(
            |p| {
                let a = Matrix::from_vec(na, d, p[..split].to_vec()).unwrap();
                let c = Matrix::from_vec(nc, d, p[split..].to_vec()).unwrap();
                let g = loss_contrastive(&a, &c, pos, tau).unwrap();
                (
                    g.value,
                    [g.anchors.into_data(), g.candidates.into_data()].concat(),
                )
            },
            &theta,
            DELTA,
        );
        assert_small("L_contr", trial, err, TOL);
    }
}

#[test]
fn combined_contrastive_gradients() {
    for trial in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(6000 + trial);
        let k = rng.random_range(2..=5);
        let d = rng.random_range(k..=8);
        let rows = rng.random_range(2..=6);
        let labeled = trial % 3 != 0;
        let classes = rng.random_range(1..=rows as u32);
        let labels = rand_labels(&mut rng, rows, classes);
        let b = backward_map(&mut rng, ((trial / 2) % 2) as usize, k);
        let dn = rng.random_range(k..=8);
        let new = rand_matrix(&mut rng, rows, dn);
        let (f, old) = loop {
            let f = forward_map(&mut rng, (trial % 2) as usize, d, k);
            let old = rand_matrix(&mut rng, rows, d);
            if relu_margin(&f, &old) > KINK_MARGIN {
                break (f, old);
            }
        };
        let freeze = trial % 5 == 4;
        let nf = f.num_params();
        let mut theta = f.params();
        theta.extend(b.params());
        let err = grad_check(
            |p| {
                let (v, g) = loss_combined_contrastive(
                    &with_params(&f, &p[..nf]),
                    &with_params(&b, &p[nf..]),
                    &old,
                    &new,
                    labeled.then_some(labels.as_slice()),
                    0.5,
                    false,
                )
                .unwrap();
                (v, [g.forward, g.backward].concat())
            },
            &theta,
            DELTA,
        );
        assert_small("L_C", trial, err, TOL);
        if freeze {
            let (_, g) =
                loss_combined_contrastive(&f, &b, &old, &new, Some(&labels), 0.5, true).unwrap();
            assert!(g.backward.iter().all(|v| *v == 0.0));
        }
    }
}

fn total_case(
    seed: u64,
    rows: usize,
    d: usize,
    k: usize,
) -> (Transform, Transform, Matrix, Matrix, Vec<u32>, LossWeights) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = backward_map(&mut rng, ((seed / 2) % 2) as usize, k);
    let (f, old) = loop {
        let f = forward_map(&mut rng, (seed % 2) as usize, d, k);
        let old = rand_matrix(&mut rng, rows, d);
        if relu_margin(&f, &old) > KINK_MARGIN {
            break (f, old);
        }
    };
    let dn = rng.random_range(k..=8);
    let new = rand_matrix(&mut rng, rows, dn);
    let labels = rand_labels(&mut rng, rows, 2);
    let mut weights = LossWeights {
        w1: rng.random_range(0.1..2.0),
        w2: rng.random_range(0.1..2.0),
        w3: rng.random_range(0.1..2.0),
        temperature: rng.random_range(0.2..1.0),
        alpha: rng.random_range(1.0..10.0),
        ..LossWeights::default()
    };
    if let Transform::Affine(m) = &b {
        let g = m.weight().outer_gram_deviation().frobenius_norm();
        weights.lambda = (g - rng.random_range(0.2..1.0)).max(0.0);
    }
    (f, b, old, new, labels, weights)
}

#[test]
fn total_loss_gradients() {
    for trial in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(7000 + trial);
        let k = rng.random_range(2..=5);
        let d = rng.random_range(k..=8);
        let rows = rng.random_range(2..=6);
        let (f, b, old, new, labels, weights) = total_case(7000 + trial, rows, d, k);
        let opts = TotalOptions {
            lambda_regularizer: true,
            ..TotalOptions::default()
        };
        let nf = f.num_params();
        let mut theta = f.params();
        theta.extend(b.params());
        let err = grad_check(
            |p| {
                let batch = Batch {
                    old: &old,
                    new: &new,
                    labels: Some(&labels),
                };
                let (br, g) = loss_total(
                    &with_params(&f, &p[..nf]),
                    &with_params(&b, &p[nf..]),
                    &batch,
                    &weights,
                    &opts,
                )
                .unwrap();
                (br.total, [g.forward, g.backward].concat())
            },
            &theta,
            DELTA,
        );
        assert_small("total", trial, err, TOL);
    }
}

#[test]
fn total_loss_gradient_on_four_dim_six_sample_batch() {
    let (f, b, old, new, labels, weights) = total_case(11, 6, 4, 4);
    let nf = f.num_params();
    let mut theta = f.params();
    theta.extend(b.params());
    let opts = TotalOptions::default();
    let err = grad_check(
        |p| {
            let batch = Batch {
                old: &old,
                new: &new,
                labels: Some(&labels),
            };
            let (br, g) = loss_total(
                &with_params(&f, &p[..nf]),
                &with_params(&b, &p[nf..]),
                &batch,
                &weights,
                &opts,
            )
            .unwrap();
            (br.total, [g.forward, g.backward].concat())
        },
        &theta,
        DELTA,
    );
    assert_small("total 4x6", 0, err, TOL);
}

#[test]
fn random_affine_grad_check_is_tight() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let b = backward_map(&mut rng, 1, 5);
    let new = rand_matrix(&mut rng, 4, 5);
    let old = rand_matrix(&mut rng, 4, 5);
    let err = grad_check(
        |p| loss_backward_mse(&with_params(&b, p), &new, &old).unwrap(),
        &b.params(),
        DELTA,
    );
    assert_small("affine", 0, err, TOL);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn square_gram_norms_agree(n in 1usize..=12, seed in any::<u64>(), scale in 0.1f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = rand_matrix(&mut rng, n, n).scale(scale);
        let a = w.gram_deviation().frobenius_norm();
        let b = w.outer_gram_deviation().frobenius_norm();
        prop_assert!((a - b).abs() <= 1e-10 * a.max(1.0));
        prop_assert!((loss_lambda_heaviside(&w, 0.0) - loss_orth(&w).0).abs() <= 1e-10 * a.max(1.0));
    }

    #[test]
    fn steep_gate_at_zero_threshold_tracks_norm(n in 2usize..=8, seed in any::<u64>(), scale in 0.2f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = rand_matrix(&mut rng, n, n).scale(scale);
        let g = w.outer_gram_deviation().frobenius_norm();
        prop_assume!(g >= 0.1);
        let (v, _) = loss_lambda_sigmoid(&w, 0.0, 1000.0);
        prop_assert!((v - g).abs() <= 0.01 * g);
    }

    #[test]
    fn contrastive_ignores_positive_rescaling(seed in any::<u64>(), sa in 0.01f64..100.0, sc in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rand_matrix(&mut rng, 4, 3);
        let c = rand_matrix(&mut rng, 5, 3);
        let la = [0u32, 1, 0, 1];
        let lc = [1u32, 0, 0, 1, 1];
        let pos = Positives::Labels { anchors: &la, candidates: &lc };
        let v = loss_contrastive(&a, &c, pos, 0.1).unwrap().value;
        let w = loss_contrastive(&a.scale(sa), &c.scale(sc), pos, 0.1).unwrap().value;
        prop_assert!((v - w).abs() <= 1e-10);
    }
}
