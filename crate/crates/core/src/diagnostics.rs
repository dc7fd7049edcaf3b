//! Self-checks run by the `diagnose` command: analytic gradients against
//! finite differences, expm/SVD invariants, and retrieval metrics against an
//! exhaustive pairwise oracle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingSet;
use crate::error::Result;
use crate::linalg::{expm, expm_frechet, svd, Matrix};
use crate::losses::{
    grad_check, loss_backward_mse, loss_combined_contrastive, loss_contrastive, loss_forward,
    loss_lambda_sigmoid, loss_orth, loss_total, Batch, LossWeights, Positives, TotalOptions,
};
use crate::retrieval::{evaluate, Distance, EvalOptions};
use crate::transforms::{AffineMap, OrthogonalMap, Transform};

const GRAD_DELTA: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiagnoseOptions {
    pub seed: u64,
    /// Random instances per gradient check.
    pub trials: usize,
    /// Test hook: corrupt one analytic gradient so the suite must fail.
    pub inject_bad_gradient: bool,
}

impl Default for DiagnoseOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            trials: 100,
            inject_bad_gradient: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Largest observed error.
    pub worst: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub checks: Vec<CheckResult>,
}

impl DiagnosticsReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn check(name: &str, worst: f64, tolerance: f64) -> CheckResult {
    CheckResult {
        name: name.to_string(),
        passed: worst <= tolerance,
        worst,
        tolerance,
    }
}

fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn with_params(map: &Transform, p: &[f64]) -> Transform {
    let mut m = map.clone();
    m.set_params(p).expect("parameter length");
    m
}

fn random_maps(rng: &mut ChaCha8Rng, n: usize) -> (Transform, Transform, Transform) {
    let f: Transform = AffineMap::random(n, n, 0.5, rng).into();
    let b_orth: Transform = OrthogonalMap::random(n, 0.5, rng).into();
    let b_aff: Transform = AffineMap::random(n, n, 0.5, rng).into();
    (f, b_orth, b_aff)
}

pub fn run_diagnostics(opts: &DiagnoseOptions) -> Result<DiagnosticsReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut checks = Vec::new();
    checks.extend(gradient_checks(
        &mut rng,
        opts.trials,
        opts.inject_bad_gradient,
    )?);
    checks.extend(linalg_checks(&mut rng)?);
    checks.push(metric_oracle_check(&mut rng)?);
    Ok(DiagnosticsReport { checks })
}

fn gradient_checks(rng: &mut ChaCha8Rng, trials: usize, inject: bool) -> Result<Vec<CheckResult>> {
    let mut worst = [0.0f64; 8];
    for _ in 0..trials {
        let n = rng.random_range(2..=8);
        let rows = rng.random_range(3..=8);
        let h_old = rand_matrix(rng, rows, n);
        let h_new = rand_matrix(rng, rows, n);
        let labels: Vec<u32> = (0..rows).map(|i| (i % 2) as u32).collect();
        let (f, b_orth, b_aff) = random_maps(rng, n);

        for (slot, b) in [(0, &b_orth), (1, &b_aff)] {
            let err = grad_check(
                |p| {
                    let (v, mut g) = loss_backward_mse(&with_params(b, p), &h_new, &h_old).unwrap();
                    if inject {
                        g[0] *= 1.01;
                    }
                    (v, g)
                },
                &b.params(),
                GRAD_DELTA,
            );
            worst[slot] = worst[slot].max(err);
        }

        let w = rand_matrix(rng, n, n).scale(1.5);
        let err = grad_check(
            |p| {
                let m = Matrix::from_vec(n, n, p.to_vec()).unwrap();
                let (v, g) = loss_orth(&m);
                (v, g.into_data())
            },
            w.data(),
            GRAD_DELTA,
        );
        worst[2] = worst[2].max(err);
        let g = w.outer_gram_deviation().frobenius_norm();
        let lambda = (g - 1.0).max(0.0);
        let err = grad_check(
            |p| {
                let m = Matrix::from_vec(n, n, p.to_vec()).unwrap();
                let (v, g) = loss_lambda_sigmoid(&m, lambda, 10.0);
                (v, g.into_data())
            },
            w.data(),
            GRAD_DELTA,
        );
        worst[3] = worst[3].max(err);

        let nf = f.num_params();
        let joint: Vec<f64> = f.params().into_iter().chain(b_orth.params()).collect();
        let split = |p: &[f64]| (with_params(&f, &p[..nf]), with_params(&b_orth, &p[nf..]));
        let concat = |g: crate::losses::MapGrads| {
            g.forward
                .into_iter()
                .chain(g.backward)
                .collect::<Vec<f64>>()
        };

        let err = grad_check(
            |p| {
                let (fm, bm) = split(p);
                let (v, g) = loss_forward(&fm, &bm, &h_old, &h_new).unwrap();
                (v, concat(g))
            },
            &joint,
            GRAD_DELTA,
        );
        worst[4] = worst[4].max(err);

        let err = grad_check(
            |p| {
                let (fm, bm) = split(p);
                let (v, g) =
                    loss_combined_contrastive(&fm, &bm, &h_old, &h_new, Some(&labels), 0.5, false)
                        .unwrap();
                (v, concat(g))
            },
            &joint,
            GRAD_DELTA,
        );
        worst[5] = worst[5].max(err);

        let split_at = rows * n;
        let err = grad_check(
            |p| {
                let a = Matrix::from_vec(rows, n, p[..split_at].to_vec()).unwrap();
                let c = Matrix::from_vec(rows, n, p[split_at..].to_vec()).unwrap();
                let positives = Positives::Labels {
                    anchors: &labels,
                    candidates: &labels,
                };
                let g = loss_contrastive(&a, &c, positives, 0.5).unwrap();
                (
                    g.value,
                    g.anchors
                        .into_data()
                        .into_iter()
                        .chain(g.candidates.into_data())
                        .collect(),
                )
            },
            &h_old
                .data()
                .iter()
                .chain(h_new.data())
                .copied()
                .collect::<Vec<f64>>(),
            GRAD_DELTA,
        );
        worst[7] = worst[7].max(err);

        let joint_aff: Vec<f64> = f.params().into_iter().chain(b_aff.params()).collect();
        let weights = LossWeights {
            w1: 0.7,
            w2: 1.3,
            w3: 0.4,
            lambda: 0.0,
            temperature: 0.5,
            ..LossWeights::default()
        };
        let total_opts = TotalOptions {
            lambda_regularizer: true,
            freeze_backward_in_contrastive: false,
        };
        let batch = Batch {
            old: &h_old,
            new: &h_new,
            labels: Some(&labels),
        };
        let err = grad_check(
            |p| {
                let fm = with_params(&f, &p[..nf]);
                let bm = with_params(&b_aff, &p[nf..]);
                let (br, g) = loss_total(&fm, &bm, &batch, &weights, &total_opts).unwrap();
                (br.total, concat(g))
            },
            &joint_aff,
            GRAD_DELTA,
        );
        worst[6] = worst[6].max(err);
    }
    let names = [
        "gradient: backward mse (orthogonal)",
        "gradient: backward mse (affine)",
        "gradient: soft orthogonality",
        "gradient: lambda sigmoid",
        "gradient: forward mse",
        "gradient: combined contrastive",
        "gradient: weighted total",
        "gradient: contrastive",
    ];
    Ok(names
        .iter()
        .zip(worst)
        .map(|(name, w)| check(name, w, GRAD_TOL))
        .collect())
}

fn random_skew(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Matrix {
    let mut p = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let v = rng.random_range(-scale..scale);
            p[(i, j)] = v;
            p[(j, i)] = -v;
        }
    }
    p
}

fn linalg_checks(rng: &mut ChaCha8Rng) -> Result<Vec<CheckResult>> {
    let (mut orth, mut inverse) = (0.0f64, 0.0f64);
    for n in [2, 5, 16, 32] {
        let p = random_skew(rng, n, 5.0);
        let r = expm(&p)?;
        orth = orth.max(r.gram_deviation().frobenius_norm());
        let prod = &r * &expm(&p.scale(-1.0))?;
        inverse = inverse.max((&prod - &Matrix::identity(n)).frobenius_norm());
    }

    let mut frechet = 0.0f64;
    let delta = 1e-6;
    for _ in 0..20 {
        let n = rng.random_range(1..=8);
        let p = rand_matrix(rng, n, n);
        let e = rand_matrix(rng, n, n);
        let l = expm_frechet(&p, &e)?;
        let plus = expm(&(&p + &e.scale(delta)))?;
        let minus = expm(&(&p - &e.scale(delta)))?;
        let fd = (&plus - &minus).scale(0.5 / delta);
        frechet = frechet.max((&l - &fd).frobenius_norm() / l.frobenius_norm().max(1e-12));
    }

    let mut recon = 0.0f64;
    for (r, c) in [(4, 3), (16, 16), (40, 25)] {
        let m = rand_matrix(rng, r, c);
        let f = svd(&m)?;
        recon = recon.max((&f.reconstruct() - &m).frobenius_norm() / m.frobenius_norm());
    }

    Ok(vec![
        check("expm: skew exponential is orthogonal", orth, 1e-10),
        check("expm: exp(P) exp(-P) = I", inverse, 1e-9),
        check(
            "expm: Frechet derivative vs finite differences",
            frechet,
            1e-5,
        ),
        check("svd: reconstruction", recon, 1e-9),
    ])
}

/// First-hit rank and AP for one query by counting, for every gallery item,
/// how many items precede it under (distance, index).
fn oracle_outcome(
    q: &[f64],
    label: u32,
    gallery: &EmbeddingSet,
    skip: Option<usize>,
) -> (Option<usize>, Option<f64>) {
    let labels = gallery.labels().expect("labeled gallery");
    let items: Vec<usize> = (0..gallery.count()).filter(|&g| Some(g) != skip).collect();
    let dist: Vec<f64> = items
        .iter()
        .map(|&g| Distance::L2.eval(q, gallery.vector(g)))
        .collect();
    let mut relevant_ranks: Vec<usize> = items
        .iter()
        .enumerate()
        .filter(|(_, &g)| labels[g] == label)
        .map(|(a, &g)| {
            1 + (0..items.len())
                .filter(|&b| dist[b] < dist[a] || (dist[b] == dist[a] && items[b] < g))
                .count()
        })
        .collect();
    relevant_ranks.sort_unstable();
    let ap = (!relevant_ranks.is_empty()).then(|| {
        relevant_ranks
            .iter()
            .enumerate()
            .map(|(i, &r)| (i + 1) as f64 / r as f64)
            .sum::<f64>()
            / relevant_ranks.len() as f64
    });
    (relevant_ranks.first().copied(), ap)
}

fn metric_oracle_check(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let mut worst = 0.0f64;
    for trial in 0..20 {
        let n = rng.random_range(2..=120);
        let classes = rng.random_range(2..=10u32);
        let m = Matrix::from_fn(n, 3, |_, _| {
            (rng.random_range(-1.0f64..1.0) * 8.0).round() / 8.0
        });
        let labels: Vec<u32> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let set = EmbeddingSet::new(m, Some(labels.clone()), "oracle")?;
        let opts = EvalOptions {
            distance: Distance::L2,
            leave_one_out: trial % 2 == 0,
        };
        let eval = evaluate(&set, &set, &opts)?;
        for (i, o) in eval.outcomes.iter().enumerate() {
            let skip = opts.leave_one_out.then_some(i);
            let (rank, ap) = oracle_outcome(set.vector(i), labels[i], &set, skip);
            if rank != o.first_hit_rank {
                worst = f64::INFINITY;
            }
            match (ap, o.average_precision) {
                (Some(a), Some(b)) => worst = worst.max((a - b).abs()),
                (None, None) => {}
                _ => worst = f64::INFINITY,
            }
        }
    }
    Ok(check("retrieval: CMC/mAP vs pairwise oracle", worst, 1e-12))
}
