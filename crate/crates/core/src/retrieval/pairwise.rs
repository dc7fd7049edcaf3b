use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};
use crate::linalg::squared_distance;

/// Largest sample count accepted by [`check_pairwise_inequalities`].
pub const PAIRWISE_CAP: usize = 2000;

/// Violation counts of the two pairwise compatibility inequalities over all
/// ordered pairs `(i, j)` with `i ≠ j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairwiseReport {
    pub same_class_pairs: u64,
    /// Same label and `d(old_i, new_j) > d(old_i, old_j)`.
    pub same_class_violations: u64,
    pub diff_class_pairs: u64,
    /// Different labels and `d(old_i, new_j) < d(new_i, new_j)`.
    pub diff_class_violations: u64,
}

impl PairwiseReport {
    pub fn same_class_fraction(&self) -> f64 {
        ratio(self.same_class_violations, self.same_class_pairs)
    }

    pub fn diff_class_fraction(&self) -> f64 {
        ratio(self.diff_class_violations, self.diff_class_pairs)
    }

    pub fn satisfied(&self) -> bool {
        self.same_class_violations == 0 && self.diff_class_violations == 0
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Evaluates both inequalities with Euclidean distance on row-aligned sets.
/// Labels come from `old`; `new` may omit them but must not disagree.
pub fn check_pairwise_inequalities(
    old: &EmbeddingSet,
    new: &EmbeddingSet,
) -> Result<PairwiseReport> {
    let labels = old.require_labels()?;
    let n = old.count();
    if new.count() != n {
        return Err(Error::Misaligned(format!(
            "{n} old rows, {} new rows",
            new.count()
        )));
    }
    if let Some(l) = new.labels() {
        if l != labels {
            return Err(Error::Misaligned("old and new labels differ".into()));
        }
    }
    if old.dim() != new.dim() {
        return Err(Error::DimMismatch {
            expected: old.dim(),
            actual: new.dim(),
        });
    }
    if n > PAIRWISE_CAP {
        return Err(Error::TooLarge {
            count: n,
            cap: PAIRWISE_CAP,
        });
    }
    let d = |a: &[f64], b: &[f64]| squared_distance(a, b).sqrt();

    let rows: Vec<[u64; 4]> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut c = [0u64; 4];
            for j in (0..n).filter(|&j| j != i) {
                let cross = d(old.vector(i), new.vector(j));
                if labels[i] == labels[j] {
                    c[0] += 1;
                    c[1] += (cross > d(old.vector(i), old.vector(j))) as u64;
                } else {
                    c[2] += 1;
                    c[3] += (cross < d(new.vector(i), new.vector(j))) as u64;
                }
            }
            c
        })
        .collect();
    let mut total = [0u64; 4];
    for r in rows {
        for (t, v) in total.iter_mut().zip(r) {
            *t += v;
        }
    }
    Ok(PairwiseReport {
        same_class_pairs: total[0],
        same_class_violations: total[1],
        diff_class_pairs: total[2],
        diff_class_violations: total[3],
    })
}
