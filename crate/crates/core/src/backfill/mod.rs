//! Partial gallery backfilling: orderings, hybrid galleries, metric curves
//! over the backfilled fraction β, and the area under those curves.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::retrieval::{evaluate, Distance, EvalOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderingKind {
    /// Farthest from the class mean first, Euclidean distance.
    OursMse,
    /// Farthest from the class mean first, cosine distance.
    OursCosine,
    Random,
}

impl OrderingKind {
    pub fn name(self) -> &'static str {
        match self {
            OrderingKind::OursMse => "ours_mse",
            OrderingKind::OursCosine => "ours_cosine",
            OrderingKind::Random => "random",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackfillOrdering {
    pub kind: OrderingKind,
    /// Gallery indices in backfill order.
    pub permutation: Vec<usize>,
    pub seed: Option<u64>,
}

/// Sorts gallery rows by descending distance to their class mean, ties by
/// ascending index. Means are taken over the given (adapted) vectors.
pub fn order_by_class_mean_distance(
    gallery_adapted: &EmbeddingSet,
    distance: Distance,
) -> Result<BackfillOrdering> {
    let members = gallery_adapted.class_members()?;
    let dim = gallery_adapted.dim();
    let mut dist = vec![0.0; gallery_adapted.count()];
    for idx in members.values() {
        let mut mu = vec![0.0; dim];
        for &i in idx {
            for (m, v) in mu.iter_mut().zip(gallery_adapted.vector(i)) {
                *m += v;
            }
        }
        let inv = 1.0 / idx.len() as f64;
        mu.iter_mut().for_each(|m| *m *= inv);
        for &i in idx {
            dist[i] = distance.eval(gallery_adapted.vector(i), &mu);
        }
    }
    let mut permutation: Vec<usize> = (0..dist.len()).collect();
    permutation.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
    Ok(BackfillOrdering {
        kind: match distance {
            Distance::L2 => OrderingKind::OursMse,
            Distance::Cosine => OrderingKind::OursCosine,
        },
        permutation,
        seed: None,
    })
}

pub fn random_ordering(n: usize, seed: u64) -> BackfillOrdering {
    let mut permutation: Vec<usize> = (0..n).collect();
    permutation.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    BackfillOrdering {
        kind: OrderingKind::Random,
        permutation,
        seed: Some(seed),
    }
}

/// Builds the ordering of the given kind; `seed` is used by `Random` only.
pub fn make_ordering(
    kind: OrderingKind,
    gallery_adapted: &EmbeddingSet,
    seed: u64,
) -> Result<BackfillOrdering> {
    match kind {
        OrderingKind::OursMse => order_by_class_mean_distance(gallery_adapted, Distance::L2),
        OrderingKind::OursCosine => order_by_class_mean_distance(gallery_adapted, Distance::Cosine),
        OrderingKind::Random => Ok(random_ordering(gallery_adapted.count(), seed)),
    }
}

/// Number of backfilled rows, `⌊β·n⌋`. The product is nudged by 1e-9 so
/// grid values such as 0.7 = 7/10 are not floored one short by round-off.
pub fn backfilled_count(beta: f64, n: usize) -> usize {
    ((beta * n as f64 + 1e-9).floor() as usize).min(n)
}

/// Rows `π_1..π_m` (with `m = ⌊β·n⌋`) come from `new_adapted`, the rest
/// from `old_adapted`. Labels follow `old_adapted`.
pub fn hybrid_gallery(
    old_adapted: &EmbeddingSet,
    new_adapted: &EmbeddingSet,
    permutation: &[usize],
    beta: f64,
) -> Result<EmbeddingSet> {
    let n = old_adapted.count();
    if new_adapted.count() != n || permutation.len() != n {
        return Err(Error::Misaligned(format!(
            "{n} old rows, {} new rows, permutation of {}",
            new_adapted.count(),
            permutation.len()
        )));
    }
    if old_adapted.dim() != new_adapted.dim() {
        return Err(Error::DimMismatch {
            expected: old_adapted.dim(),
            actual: new_adapted.dim(),
        });
    }
    if new_adapted
        .labels()
        .is_some_and(|l| Some(l) != old_adapted.labels())
    {
        return Err(Error::Misaligned("old and new labels differ".into()));
    }
    let mut seen = vec![false; n];
    for &p in permutation {
        if p >= n || std::mem::replace(&mut seen[p], true) {
            return Err(Error::InvalidConfig("ordering is not a permutation".into()));
        }
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidConfig(format!("beta {beta} outside [0, 1]")));
    }
    let mut rows: Matrix = old_adapted.vectors().clone();
    for &i in &permutation[..backfilled_count(beta, n)] {
        rows.row_mut(i).copy_from_slice(new_adapted.vector(i));
    }
    old_adapted.with_vectors(rows, format!("hybrid(beta={beta})"))
}

/// β = 0.0, 0.1, …, 1.0.
pub fn default_beta_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

fn check_grid(grid: &[f64]) -> Result<()> {
    let ok = grid.len() >= 2
        && grid.first() == Some(&0.0)
        && grid.last() == Some(&1.0)
        && grid.windows(2).all(|w| w[0] < w[1]);
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidConfig(
            "beta grid must be strictly ascending from 0 to 1".into(),
        ))
    }
}

/// Trapezoidal area under `values` over `grid`.
pub fn trapezoid(grid: &[f64], values: &[f64]) -> f64 {
    grid.windows(2)
        .zip(values.windows(2))
        .map(|(b, v)| 0.5 * (b[1] - b[0]) * (v[0] + v[1]))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackfillCurve {
    pub ordering: OrderingKind,
    pub beta_grid: Vec<f64>,
    pub cmc_top1: Vec<f64>,
    pub map: Vec<f64>,
    pub m_tilde_cmc_top1: f64,
    pub m_tilde_map: f64,
}

impl BackfillCurve {
    /// `beta,cmc_top1,map`, one row per grid point.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("beta,cmc_top1,map\n");
        for ((b, c), m) in self.beta_grid.iter().zip(&self.cmc_top1).zip(&self.map) {
            let _ = writeln!(s, "{b},{c},{m}");
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Evaluates `query` against the hybrid gallery at every β of the grid.
pub fn backfill_curve(
    query: &EmbeddingSet,
    old_adapted: &EmbeddingSet,
    new_adapted: &EmbeddingSet,
    ordering: &BackfillOrdering,
    beta_grid: &[f64],
    opts: &EvalOptions,
) -> Result<BackfillCurve> {
    check_grid(beta_grid)?;
    let mut cmc_top1 = Vec::with_capacity(beta_grid.len());
    let mut map = Vec::with_capacity(beta_grid.len());
    for &beta in beta_grid {
        let gallery = hybrid_gallery(old_adapted, new_adapted, &ordering.permutation, beta)?;
        let eval = evaluate(query, &gallery, opts)?;
        cmc_top1.push(eval.cmc(1));
        map.push(eval.mean_average_precision());
    }
    Ok(BackfillCurve {
        ordering: ordering.kind,
        m_tilde_cmc_top1: trapezoid(beta_grid, &cmc_top1),
        m_tilde_map: trapezoid(beta_grid, &map),
        beta_grid: beta_grid.to_vec(),
        cmc_top1,
        map,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(rows: &[[f64; 2]], labels: &[u32]) -> EmbeddingSet {
        EmbeddingSet::new(Matrix::from_rows(rows), Some(labels.to_vec()), "t").unwrap()
    }

    #[test]
    fn farthest_from_mean_first() {
        // mean (0,0); distances 3, 1, 2 and the mirrored points
        let s = set(
            &[
                [3.0, 0.0],
                [1.0, 0.0],
                [2.0, 0.0],
                [-3.0, 0.0],
                [-1.0, 0.0],
                [-2.0, 0.0],
            ],
            &[0; 6],
        );
        let o = order_by_class_mean_distance(&s, Distance::L2).unwrap();
        assert_eq!(o.permutation, [0, 3, 2, 5, 1, 4]);
        assert_eq!(o.kind, OrderingKind::OursMse);
    }

    #[test]
    fn equidistant_points_keep_index_order() {
        let s = set(&[[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]], &[0; 4]);
        let o = order_by_class_mean_distance(&s, Distance::L2).unwrap();
        assert_eq!(o.permutation, [0, 1, 2, 3]);
    }

    #[test]
    fn missing_labels() {
        let s = set(&[[1.0, 0.0]], &[0]).without_labels();
        assert!(matches!(
            order_by_class_mean_distance(&s, Distance::L2),
            Err(Error::MissingLabels)
        ));
    }

    #[test]
    fn hybrid_endpoints_and_floor() {
        let old = set(
            &[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0]],
            &[0, 0, 1, 1],
        );
        let new = set(
            &[[0.0, 9.0], [1.0, 9.0], [2.0, 9.0], [3.0, 9.0]],
            &[0, 0, 1, 1],
        );
        let pi = [2, 0, 3, 1];
        assert_eq!(
            hybrid_gallery(&old, &new, &pi, 0.0).unwrap().vectors(),
            old.vectors()
        );
        assert_eq!(
            hybrid_gallery(&old, &new, &pi, 1.0).unwrap().vectors(),
            new.vectors()
        );
        let h = hybrid_gallery(&old, &new, &pi, 0.5).unwrap();
        let swapped: Vec<usize> = (0..4).filter(|&i| h.vector(i)[1] == 9.0).collect();
        assert_eq!(swapped, [0, 2]);
        assert_eq!(h.labels(), old.labels());
        let h = hybrid_gallery(&old, &new, &pi, 0.74).unwrap();
        assert_eq!((0..4).filter(|&i| h.vector(i)[1] == 9.0).count(), 2);
    }

    #[test]
    fn grid_fractions_floor_exactly() {
        for n in 1..200 {
            for (i, b) in default_beta_grid().into_iter().enumerate() {
                assert_eq!(backfilled_count(b, n), i * n / 10, "beta {b} n {n}");
            }
        }
    }

    #[test]
    fn hybrid_rejects_bad_inputs() {
        let old = set(&[[0.0, 0.0], [1.0, 0.0]], &[0, 1]);
        let short = set(&[[0.0, 0.0]], &[0]);
        assert!(matches!(
            hybrid_gallery(&old, &short, &[0], 0.5),
            Err(Error::Misaligned(_))
        ));
        assert!(hybrid_gallery(&old, &old, &[0, 0], 0.5).is_err());
        assert!(hybrid_gallery(&old, &old, &[0, 1], 1.5).is_err());
    }

    #[test]
    fn trapezoid_arithmetic() {
        assert!((trapezoid(&[0.0, 0.5, 1.0], &[0.4, 0.6, 0.8]) - 0.6).abs() < 1e-15);
        let grid = default_beta_grid();
        assert!((trapezoid(&grid, &[0.37; 11]) - 0.37).abs() < 1e-15);
    }

    #[test]
    fn random_ordering_is_seeded_permutation() {
        let a = random_ordering(30, 4);
        assert_eq!(a, random_ordering(30, 4));
        assert_ne!(a.permutation, random_ordering(30, 5).permutation);
        let mut p = a.permutation.clone();
        p.sort_unstable();
        assert_eq!(p, (0..30).collect::<Vec<_>>());
    }

    #[test]
    fn grid_validation_and_csv() {
        let s = set(
            &[[0.0, 0.0], [0.1, 0.0], [5.0, 0.0], [5.1, 0.0]],
            &[0, 0, 1, 1],
        );
        let o = random_ordering(4, 0);
        let opts = EvalOptions {
            leave_one_out: true,
            ..EvalOptions::default()
        };
        assert!(backfill_curve(&s, &s, &s, &o, &[0.0, 0.5], &opts).is_err());
        assert!(backfill_curve(&s, &s, &s, &o, &[0.0, 0.6, 0.5, 1.0], &opts).is_err());
        let c = backfill_curve(&s, &s, &s, &o, &[0.0, 0.5, 1.0], &opts).unwrap();
        assert_eq!(c.to_csv(), "beta,cmc_top1,map\n0,1,1\n0.5,1,1\n1,1,1\n");
        assert_eq!(c.m_tilde_cmc_top1, 1.0);
    }
}
