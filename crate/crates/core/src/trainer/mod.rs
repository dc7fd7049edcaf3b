//! Adam training of a forward/backward map pair on paired embeddings.

mod adam;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState};

use crate::embedding::PairedEmbeddings;
use crate::error::{Error, Result};
use crate::losses::{loss_total, Batch, LossBreakdown, LossWeights, TotalOptions};
use crate::transforms::{AffineMap, MlpMap, OrthogonalMap, Transform};

/// Skew entries start at N(0, 1e-4).
pub const DEFAULT_SKEW_INIT_STD: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackwardKind {
    /// `B = exp(P)`, exactly orthogonal.
    Orthogonal,
    /// Affine `B` under the sigmoid-gated λ regularizer.
    LambdaAffine,
    /// Affine `B` with no orthogonality pressure (λ → ∞).
    Affine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForwardKind {
    Affine,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContrastiveMode {
    /// Positives share a class label.
    #[default]
    Labeled,
    /// Positives are the row-aligned counterparts only.
    Unlabeled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub backward_kind: BackwardKind,
    pub forward_kind: ForwardKind,
    pub contrastive_mode: ContrastiveMode,
    pub freeze_backward_in_contrastive: bool,
    /// Overrides the initial std of B's parameters (skew entries, or
    /// affine weights).
    pub backward_init_std: Option<f64>,
    /// Overrides the initial std of an affine F's weights.
    pub forward_init_std: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            learning_rate: adam.learning_rate,
            adam_beta1: adam.beta1,
            adam_beta2: adam.beta2,
            adam_eps: adam.eps,
            batch_size: 256,
            epochs: 100,
            seed: 0,
            weights: LossWeights::default(),
            backward_kind: BackwardKind::Orthogonal,
            forward_kind: ForwardKind::Affine,
            contrastive_mode: ContrastiveMode::Labeled,
            freeze_backward_in_contrastive: false,
            backward_init_std: None,
            forward_init_std: None,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.adam().validate()?;
        self.weights.validate()?;
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        for (name, s) in [
            ("backward_init_std", self.backward_init_std),
            ("forward_init_std", self.forward_init_std),
        ] {
            if let Some(s) = s {
                if !(s.is_finite() && s > 0.0) {
                    return Err(Error::InvalidConfig(format!("{name} must be positive")));
                }
            }
        }
        Ok(())
    }

    fn loss_options(&self) -> TotalOptions {
        TotalOptions {
            lambda_regularizer: self.backward_kind == BackwardKind::LambdaAffine,
            freeze_backward_in_contrastive: self.freeze_backward_in_contrastive,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean step breakdown per epoch.
    pub history: Vec<LossBreakdown>,
    /// `‖WWᵀ − I‖_F` of the trained backward map.
    pub final_gram_deviation: f64,
    pub steps: u64,
    pub seed: u64,
    /// Excluded from serialized reports so they are reproducible.
    #[serde(skip)]
    pub wall_clock_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub forward: Transform,
    pub backward: Transform,
    pub report: TrainReport,
}

/// Passed to the observer after every optimizer step.
#[derive(Debug)]
pub struct StepInfo<'a> {
    pub epoch: usize,
    pub step: u64,
    /// Loss at the parameters before this step's update.
    pub breakdown: LossBreakdown,
    pub forward: &'a Transform,
    pub backward: &'a Transform,
}

/// Permutation of `0..n` for one epoch, a pure function of `(seed, epoch)`.
pub fn epoch_shuffle(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // stream 0 is reserved for initialization
    rng.set_stream(epoch.wrapping_add(1));
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx
}

/// Initial maps for a pair with old dimension `d_old` and shared dimension
/// `k`.
pub fn initial_maps(config: &TrainConfig, d_old: usize, k: usize) -> (Transform, Transform) {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(0);
    let forward: Transform = match config.forward_kind {
        ForwardKind::Affine => {
            let std = config
                .forward_init_std
                .unwrap_or((1.0 / d_old as f64).sqrt());
            AffineMap::random(d_old, k, std, &mut rng).into()
        }
        ForwardKind::Mlp => MlpMap::two_layer(d_old, k, &mut rng).into(),
    };
    let backward: Transform = match config.backward_kind {
        BackwardKind::Orthogonal => OrthogonalMap::random(
            k,
            config.backward_init_std.unwrap_or(DEFAULT_SKEW_INIT_STD),
            &mut rng,
        )
        .into(),
        BackwardKind::LambdaAffine | BackwardKind::Affine => {
            let std = config.backward_init_std.unwrap_or((1.0 / k as f64).sqrt());
            AffineMap::random(k, k, std, &mut rng).into()
        }
    };
    (forward, backward)
}

pub fn train(pair: &PairedEmbeddings, config: &TrainConfig) -> Result<Trained> {
    train_observed(pair, config, |_| {})
}

/// Like [`train`], calling `observer` after every optimizer step.
pub fn train_observed<O>(
    pair: &PairedEmbeddings,
    config: &TrainConfig,
    mut observer: O,
) -> Result<Trained>
where
    O: FnMut(&StepInfo<'_>),
{
    config.validate()?;
    let started = Instant::now();
    let k = pair.common_dim();
    let old = pair.old.vectors();
    let new = pair.new.truncate(k)?;
    let new = new.vectors();
    let labels = match (config.contrastive_mode, config.weights.w3 > 0.0) {
        (ContrastiveMode::Labeled, true) => Some(pair.labels().ok_or(Error::MissingLabels)?),
        _ => None,
    };
    let opts = config.loss_options();
    let adam = config.adam();

    let (mut forward, mut backward) = initial_maps(config, pair.old.dim(), k);
    let mut f_params = forward.params();
    let mut b_params = backward.params();
    let mut f_state = AdamState::new(f_params.len());
    let mut b_state = AdamState::new(b_params.len());

    let n = pair.count();
    let mut history = Vec::with_capacity(config.epochs);
    let mut step = 0u64;
    for epoch in 0..config.epochs {
        let order = epoch_shuffle(n, config.seed, epoch as u64);
        let mut sum = LossBreakdown::default();
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let old_b = old.select_rows(chunk);
            let new_b = new.select_rows(chunk);
            let labels_b: Option<Vec<u32>> = labels.map(|l| chunk.iter().map(|&i| l[i]).collect());
            let batch = Batch {
                old: &old_b,
                new: &new_b,
                labels: labels_b.as_deref(),
            };
            let (breakdown, grads) =
                loss_total(&forward, &backward, &batch, &config.weights, &opts)?;
            adam_step(&mut f_params, &grads.forward, &mut f_state, &adam)?;
            adam_step(&mut b_params, &grads.backward, &mut b_state, &adam)?;
            forward.set_params(&f_params)?;
            backward.set_params(&b_params)?;
            step += 1;
            observer(&StepInfo {
                epoch,
                step,
                breakdown,
                forward: &forward,
                backward: &backward,
            });
            sum.total += breakdown.total;
            sum.l_f += breakdown.l_f;
            sum.l_b += breakdown.l_b;
            sum.l_c += breakdown.l_c;
            sum.l_lambda += breakdown.l_lambda;
            batches += 1;
        }
        let m = 1.0 / batches as f64;
        history.push(LossBreakdown {
            total: sum.total * m,
            l_f: sum.l_f * m,
            l_b: sum.l_b * m,
            l_c: sum.l_c * m,
            l_lambda: sum.l_lambda * m,
        });
    }

    let report = TrainReport {
        history,
        final_gram_deviation: backward.gram_deviation().unwrap_or(f64::NAN),
        steps: step,
        seed: config.seed,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    Ok(Trained {
        forward,
        backward,
        report,
    })
}
