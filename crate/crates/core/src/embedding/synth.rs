//! Gaussian-blob embedding pairs for desk-scale experiments.
//!
//! The old space holds one isotropic Gaussian blob per class. The new space
//! is the old one pushed through a random distortion (rotation, or a
//! well-conditioned affine map), optionally with tighter classes to stand in
//! for a better model, plus optional isotropic noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingSet, PairedEmbeddings};
use crate::error::{Error, Result};
use crate::linalg::{squared_distance, svd, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Distortion {
    Orthogonal,
    Affine,
    AffineNoise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClassSpread {
    Shared(f64),
    PerClass(Vec<f64>),
}

impl ClassSpread {
    pub fn for_class(&self, c: usize) -> f64 {
        match self {
            ClassSpread::Shared(s) => *s,
            ClassSpread::PerClass(v) => v[c],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub per_class: usize,
    pub dim_old: usize,
    pub dim_new: usize,
    pub class_spread: ClassSpread,
    /// Minimum distance between any two class means in the old space.
    pub inter_class_separation: f64,
    pub distortion: Distortion,
    /// Standard deviation of isotropic noise added in the new space.
    pub noise_scale: f64,
    /// Ratio of largest to smallest singular value of the affine distortion.
    pub condition_number: f64,
    /// Multiplies each sample's offset from its class mean before the
    /// distortion; values below 1 model a better-clustering new model.
    pub new_spread_factor: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_classes: 10,
            per_class: 20,
            dim_old: 8,
            dim_new: 8,
            class_spread: ClassSpread::Shared(1.0),
            inter_class_separation: 4.0,
            distortion: Distortion::Orthogonal,
            noise_scale: 0.0,
            condition_number: 5.0,
            new_spread_factor: 1.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidSpec(m.to_string()));
        if self.num_classes < 2 {
            return fail("num_classes must be at least 2");
        }
        if self.per_class < 2 {
            return fail("per_class must be at least 2");
        }
        if self.dim_old < 2 || self.dim_new < 2 {
            return fail("dimensions must be at least 2");
        }
        match &self.class_spread {
            ClassSpread::Shared(s) if !(*s > 0.0 && s.is_finite()) => {
                return fail("class spread must be positive");
            }
            ClassSpread::PerClass(v) => {
                if v.len() != self.num_classes {
                    return fail("per-class spread needs one value per class");
                }
                if !v.iter().all(|s| *s > 0.0 && s.is_finite()) {
                    return fail("class spreads must be positive");
                }
            }
            _ => {}
        }
        if !(self.inter_class_separation > 0.0 && self.inter_class_separation.is_finite()) {
            return fail("inter_class_separation must be positive");
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return fail("noise_scale must be nonnegative");
        }
        if self.distortion == Distortion::AffineNoise && self.noise_scale == 0.0 {
            return fail("affine-noise distortion needs a positive noise_scale");
        }
        if !(self.condition_number >= 1.0 && self.condition_number.is_finite()) {
            return fail("condition_number must be at least 1");
        }
        if !(self.new_spread_factor > 0.0 && self.new_spread_factor.is_finite()) {
            return fail("new_spread_factor must be positive");
        }
        Ok(())
    }
}

/// The ground-truth map used to produce the new space: `x ↦ W·x + b`.
#[derive(Debug, Clone)]
pub struct SynthTruth {
    pub class_means: Matrix,
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

pub fn synth_pair(spec: &SynthSpec) -> Result<PairedEmbeddings> {
    synth_pair_with_truth(spec).map(|(p, _)| p)
}

pub fn synth_pair_with_truth(spec: &SynthSpec) -> Result<(PairedEmbeddings, SynthTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.dim_old;
    let n = spec.dim_new;

    let means = class_means(&mut rng, spec.num_classes, d, spec.inter_class_separation);

    let (weight, bias) = match spec.distortion {
        Distortion::Orthogonal => (random_orthonormal(&mut rng, n, d, true)?, vec![0.0; n]),
        Distortion::Affine | Distortion::AffineNoise => {
            let r = n.min(d);
            let q1 = random_orthonormal(&mut rng, n, r, false)?;
            let q2 = random_orthonormal(&mut rng, d, r, false)?;
            let sv: Vec<f64> = (0..r)
                .map(|i| {
                    let t = if r == 1 {
                        0.5
                    } else {
                        i as f64 / (r - 1) as f64
                    };
                    spec.condition_number.powf(t - 0.5)
                })
                .collect();
            let w = (&q1 * &Matrix::diag(&sv)).matmul_t(&q2);
            let b = (0..n).map(|_| gaussian(&mut rng)).collect();
            (w, b)
        }
    };

    let count = spec.num_classes * spec.per_class;
    let mut old = Matrix::zeros(count, d);
    let mut new = Matrix::zeros(count, n);
    let mut labels = Vec::with_capacity(count);
    let mut shrunk = vec![0.0; d];
    for c in 0..spec.num_classes {
        let spread = spec.class_spread.for_class(c);
        let mu = means.row(c);
        for k in 0..spec.per_class {
            let row = c * spec.per_class + k;
            labels.push(c as u32);
            for j in 0..d {
                let offset = spread * gaussian(&mut rng);
                old[(row, j)] = mu[j] + offset;
                shrunk[j] = mu[j] + spec.new_spread_factor * offset;
            }
            for i in 0..n {
                let mut v = bias[i];
                for (j, s) in shrunk.iter().enumerate() {
                    v += weight[(i, j)] * s;
                }
                if spec.noise_scale > 0.0 {
                    v += spec.noise_scale * gaussian(&mut rng);
                }
                new[(row, i)] = v;
            }
        }
    }

    let old = EmbeddingSet::new(old, Some(labels.clone()), "synth-old")?;
    let new = EmbeddingSet::new(new, Some(labels), "synth-new")?;
    Ok((
        PairedEmbeddings::new(old, new)?,
        SynthTruth {
            class_means: means,
            weight,
            bias,
        },
    ))
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Gaussian directions rescaled so the closest pair is `separation` apart.
fn class_means(rng: &mut ChaCha8Rng, classes: usize, dim: usize, separation: f64) -> Matrix {
    let raw = Matrix::from_fn(classes, dim, |_, _| gaussian(rng));
    let mut min_dist = f64::INFINITY;
    for a in 0..classes {
        for b in a + 1..classes {
            min_dist = min_dist.min(squared_distance(raw.row(a), raw.row(b)).sqrt());
        }
    }
    raw.scale(separation / min_dist)
}

/// Random `rows × cols` matrix with orthonormal columns (or rows, when wide):
/// the polar factor of a Gaussian matrix. With `rotation` and a square shape
/// the determinant is forced to +1.
pub fn random_orthonormal(
    rng: &mut ChaCha8Rng,
    rows: usize,
    cols: usize,
    rotation: bool,
) -> Result<Matrix> {
    let g = Matrix::from_fn(rows, cols, |_, _| gaussian(rng));
    let f = svd(&g)?;
    let mut q = f.u.matmul_t(&f.v);
    if rotation && rows == cols && q.determinant()? < 0.0 {
        for x in q.row_mut(0) {
            *x = -*x;
        }
    }
    Ok(q)
}
