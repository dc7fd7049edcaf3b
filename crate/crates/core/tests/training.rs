use lalign_core::embedding::{synth_pair, ClassSpread, Distortion, PairedEmbeddings, SynthSpec};
use lalign_core::linalg::column_angle_kde;
use lalign_core::linalg::kde::{angle_grid, mode};
use lalign_core::losses::{loss_backward_mse, LossWeights};
use lalign_core::trainer::{train, train_observed, BackwardKind, TrainConfig};
use lalign_core::transforms::{alignment_mse, procrustes_fit, Transform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn only(w1: f64, w2: f64, w3: f64) -> LossWeights {
    LossWeights {
        w1,
        w2,
        w3,
        ..LossWeights::default()
    }
}

fn backward_mse(b: &Transform, pair: &PairedEmbeddings) -> f64 {
    let k = pair.common_dim();
    let new = pair.new.truncate(k).unwrap();
    loss_backward_mse(b, new.vectors(), pair.old.vectors())
        .unwrap()
        .0
}

#[test]
fn orthogonal_map_stays_orthogonal_every_step() {
    let n = 32;
    let pair = synth_pair(&SynthSpec {
        dim_old: n,
        dim_new: n,
        ..SynthSpec::default()
    })
    .unwrap();
    let config = TrainConfig {
        epochs: 200,
        weights: only(1.0, 1.0, 0.0),
        backward_init_std: Some(0.5),
        ..TrainConfig::default()
    };
    let mut worst = 0.0f64;
    let mut steps = 0;
    let out = train_observed(&pair, &config, |s| {
        worst = worst.max(s.backward.gram_deviation().unwrap());
        steps += 1;
    })
    .unwrap();
    assert_eq!(steps, 200);
    assert!(worst <= 1e-8, "worst deviation {worst}");

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let bx = out.backward.apply_vec(&x).unwrap();
        let by = out.backward.apply_vec(&y).unwrap();
        let d0 = lalign_core::linalg::squared_distance(&x, &y).sqrt();
        let d1 = lalign_core::linalg::squared_distance(&bx, &by).sqrt();
        assert!((d0 - d1).abs() <= 1e-8, "{d0} vs {d1}");
    }
}

fn procrustes_case(noise: f64, seed: u64) -> (f64, f64) {
    let pair = synth_pair(&SynthSpec {
        noise_scale: noise,
        seed,
        ..SynthSpec::default()
    })
    .unwrap();
    let config = TrainConfig {
        epochs: 500,
        batch_size: 8,
        seed,
        weights: only(0.0, 1.0, 0.0),
        ..TrainConfig::default()
    };
    let out = train(&pair, &config).unwrap();
    let trained = backward_mse(&out.backward, &pair);
    let fit = procrustes_fit(pair.new.vectors(), pair.old.vectors()).unwrap();
    let optimum = alignment_mse(&fit.rotation, pair.new.vectors(), pair.old.vectors());
    (trained, optimum)
}

#[test]
fn trained_orthogonal_map_matches_procrustes() {
    let (trained, optimum) = procrustes_case(0.0, 0);
    assert!(trained <= 1e-4, "noise-free mse {trained}");
    assert!(optimum <= 1e-20, "procrustes mse {optimum}");
    let (trained, optimum) = procrustes_case(0.01, 0);
    assert!(
        trained <= 1.05 * optimum,
        "trained {trained} vs optimum {optimum}"
    );
}

fn lambda_only(lambda: f64, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 3000,
        seed,
        weights: LossWeights {
            w1: 0.0,
            w2: 0.0,
            w3: 0.0,
            lambda,
            alpha: 10.0,
            ..LossWeights::default()
        },
        backward_kind: BackwardKind::LambdaAffine,
        backward_init_std: Some(1.0),
        ..TrainConfig::default()
    }
}

#[test]
fn lambda_zero_drives_columns_orthogonal() {
    let pair = synth_pair(&SynthSpec::default()).unwrap();
    let out = train(&pair, &lambda_only(0.0, 0)).unwrap();
    let g = out.report.final_gram_deviation;
    assert!(g <= 0.1, "final deviation {g}");
    let w = out.backward.linear_part().unwrap();
    let grid = angle_grid(0.5);
    let peak = mode(&grid, &column_angle_kde(w, None, &grid).unwrap());
    assert!((85.0..=95.0).contains(&peak), "mode {peak}");
}

#[test]
fn lambda_regularizer_only_pushes_down_from_above() {
    let pair = synth_pair(&SynthSpec::default()).unwrap();
    for lambda in [1.0, 6.0, 12.0] {
        let config = lambda_only(lambda, 0);
        let (_, b0) = lalign_core::trainer::initial_maps(&config, 8, 8);
        let g0 = b0.gram_deviation().unwrap();
        let g = train(&pair, &config).unwrap().report.final_gram_deviation;
        assert!(g0 > lambda + 0.5, "init deviation {g0}");
        assert!(g < lambda, "lambda {lambda}: final {g}");
    }
}

/// 2-D toy: the old space holds ten classes, the new space is an anisotropic
/// affine image of it, and the maps are fit on the first five classes only.
fn toy_run(kind: BackwardKind, seed: u64) -> (f64, f64) {
    let pair = synth_pair(&SynthSpec {
        num_classes: 10,
        per_class: 30,
        dim_old: 2,
        dim_new: 2,
        class_spread: ClassSpread::Shared(0.3),
        inter_class_separation: 0.5,
        distortion: Distortion::Affine,
        condition_number: 4.0,
        seed,
        ..SynthSpec::default()
    })
    .unwrap();
    let seen: Vec<usize> = (0..pair.count())
        .filter(|&i| pair.labels().unwrap()[i] < 5)
        .collect();
    let train_pair = pair.select(&seen);
    let config = TrainConfig {
        epochs: 3000,
        learning_rate: 1e-2,
        seed,
        weights: LossWeights {
            lambda: 1.0,
            ..only(0.0, 1.0, 0.0)
        },
        backward_kind: kind,
        ..TrainConfig::default()
    };
    let out = train(&train_pair, &config).unwrap();
    (
        backward_mse(&out.backward, &pair),
        out.backward.gram_deviation().unwrap(),
    )
}

#[test]
fn relaxed_orthogonality_sits_between_affine_and_orthogonal() {
    for seed in 0..5 {
        let (mse_a, g_a) = toy_run(BackwardKind::Affine, seed);
        let (mse_l, g_l) = toy_run(BackwardKind::LambdaAffine, seed);
        let (mse_o, g_o) = toy_run(BackwardKind::Orthogonal, seed);
        let msg = format!("seed {seed}: mse {mse_a} {mse_l} {mse_o}, gram {g_a} {g_l} {g_o}");
        assert!(mse_a <= mse_l && mse_l <= mse_o, "{msg}");
        assert!(
            g_o <= 1e-8 && g_o <= g_l && g_l <= 1.5 && 1.5 < g_a,
            "{msg}"
        );
    }
}

#[test]
fn identical_configs_give_identical_reports() {
    let pair = synth_pair(&SynthSpec::default()).unwrap();
    let config = TrainConfig {
        epochs: 20,
        batch_size: 64,
        seed: 42,
        ..TrainConfig::default()
    };
    let a = train(&pair, &config).unwrap();
    let b = train(&pair, &config).unwrap();
    assert_eq!(
        serde_json::to_string(&a.report).unwrap(),
        serde_json::to_string(&b.report).unwrap()
    );
    assert_eq!(a.forward, b.forward);
    assert_eq!(a.backward, b.backward);
    let c = train(&pair, &TrainConfig { seed: 43, ..config }).unwrap();
    assert_ne!(a.backward, c.backward);
}

#[test]
fn training_leaves_embeddings_untouched() {
    let pair = synth_pair(&SynthSpec::default()).unwrap();
    let before = pair.clone();
    train(
        &pair,
        &TrainConfig {
            epochs: 5,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    assert_eq!(pair, before);
}

#[test]
fn total_loss_decreases_over_first_steps_for_every_subset() {
    let pair = synth_pair(&SynthSpec::default()).unwrap();
    for (name, weights) in LossWeights::default().ablation_subsets() {
        let config = TrainConfig {
            epochs: 51,
            weights,
            ..TrainConfig::default()
        };
        let mut totals = Vec::new();
        train_observed(&pair, &config, |s| totals.push(s.breakdown.total)).unwrap();
        for w in totals.windows(2) {
            assert!(w[1] < w[0], "{name}: {} then {}", w[0], w[1]);
        }
    }
}

#[test]
fn forward_map_output_matches_shared_dimension() {
    let pair = synth_pair(&SynthSpec {
        dim_old: 6,
        dim_new: 4,
        ..SynthSpec::default()
    })
    .unwrap();
    let out = train(
        &pair,
        &TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    assert_eq!((out.forward.in_dim(), out.forward.out_dim()), (6, 4));
    assert_eq!((out.backward.in_dim(), out.backward.out_dim()), (4, 4));
    let mapped = out.forward.apply(pair.old.vectors()).unwrap();
    assert_eq!(mapped.shape(), (pair.count(), 4));
}
