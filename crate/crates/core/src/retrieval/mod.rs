//! Retrieval evaluation: CMC-Top-k, mAP, the pairwise compatibility
//! inequalities, and the empirical compatibility verdict.

mod pairwise;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use pairwise::{check_pairwise_inequalities, PairwiseReport, PAIRWISE_CAP};

use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};
use crate::linalg::{dot, norm2, squared_distance};

pub const DEFAULT_TOP_K: [usize; 3] = [1, 5, 10];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distance {
    #[default]
    L2,
    /// `1 − cos(a, b)`; a zero vector has cosine 0 with everything.
    Cosine,
}

impl Distance {
    pub fn eval(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Distance::L2 => squared_distance(a, b).sqrt(),
            Distance::Cosine => {
                let n = norm2(a) * norm2(b);
                if n == 0.0 {
                    1.0
                } else {
                    1.0 - dot(a, b) / n
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub distance: Distance,
    /// Query `i` and gallery `i` are the same sample; that gallery row is
    /// excluded from query `i`'s ranking.
    pub leave_one_out: bool,
}

/// Ranking outcome for one query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub query: usize,
    pub label: u32,
    /// 1-based rank of the first same-label gallery item.
    pub first_hit_rank: Option<usize>,
    /// Average precision; `None` when the gallery holds no relevant item.
    pub average_precision: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub outcomes: Vec<QueryOutcome>,
}

impl Evaluation {
    /// Fraction of queries with a same-label item among the `k` nearest.
    pub fn cmc(&self, k: usize) -> f64 {
        let hits = self
            .outcomes
            .iter()
            .filter(|o| o.first_hit_rank.is_some_and(|r| r <= k))
            .count();
        hits as f64 / self.outcomes.len() as f64
    }

    /// Mean AP over queries with at least one relevant gallery item (0 when
    /// there are none).
    pub fn mean_average_precision(&self) -> f64 {
        let (sum, n) = self
            .outcomes
            .iter()
            .filter_map(|o| o.average_precision)
            .fold((0.0, 0usize), |(s, n), ap| (s + ap, n + 1));
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    /// Queries left out of mAP for lack of a relevant gallery item.
    pub fn excluded_from_map(&self) -> usize {
        self.outcomes
            .iter()
            .filter(|o| o.average_precision.is_none())
            .count()
    }

    /// `query,label,first_hit_rank,average_precision`; missing values are
    /// empty fields.
    pub fn write_per_query_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "query,label,first_hit_rank,average_precision")?;
        for o in &self.outcomes {
            let rank = o.first_hit_rank.map(|r| r.to_string()).unwrap_or_default();
            let ap = o
                .average_precision
                .map(|a| a.to_string())
                .unwrap_or_default();
            writeln!(out, "{},{},{rank},{ap}", o.query, o.label)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Ranks the gallery for every query. Ties in distance are broken by
/// ascending gallery index.
pub fn evaluate(
    query: &EmbeddingSet,
    gallery: &EmbeddingSet,
    opts: &EvalOptions,
) -> Result<Evaluation> {
    let q_labels = query.require_labels()?;
    let g_labels = gallery.require_labels()?;
    if query.dim() != gallery.dim() {
        return Err(Error::DimMismatch {
            expected: gallery.dim(),
            actual: query.dim(),
        });
    }
    if opts.leave_one_out {
        if query.count() != gallery.count() {
            return Err(Error::Misaligned(format!(
                "leave-one-out needs row-aligned sets, got {} queries and {} gallery items",
                query.count(),
                gallery.count()
            )));
        }
        if gallery.count() < 2 {
            return Err(Error::EmptyGallery);
        }
    }

    let outcomes = (0..query.count())
        .into_par_iter()
        .map(|qi| {
            let excluded = opts.leave_one_out.then_some(qi);
            rank_one(
                query.vector(qi),
                q_labels[qi],
                gallery,
                g_labels,
                opts.distance,
                excluded,
                qi,
            )
        })
        .collect();
    Ok(Evaluation { outcomes })
}

fn rank_one(
    q: &[f64],
    label: u32,
    gallery: &EmbeddingSet,
    g_labels: &[u32],
    distance: Distance,
    excluded: Option<usize>,
    query_index: usize,
) -> QueryOutcome {
    let mut ranked: Vec<(f64, usize)> = (0..gallery.count())
        .filter(|&g| Some(g) != excluded)
        .map(|g| (distance.eval(q, gallery.vector(g)), g))
        .collect();
    ranked.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut first_hit_rank = None;
    let mut relevant = 0usize;
    let mut precision_sum = 0.0;
    for (pos, &(_, g)) in ranked.iter().enumerate() {
        if g_labels[g] == label {
            relevant += 1;
            precision_sum += relevant as f64 / (pos + 1) as f64;
            first_hit_rank.get_or_insert(pos + 1);
        }
    }
    QueryOutcome {
        query: query_index,
        label,
        first_hit_rank,
        average_precision: (relevant > 0).then(|| precision_sum / relevant as f64),
    }
}

pub fn cmc(
    query: &EmbeddingSet,
    gallery: &EmbeddingSet,
    k: usize,
    opts: &EvalOptions,
) -> Result<f64> {
    check_k(k)?;
    Ok(evaluate(query, gallery, opts)?.cmc(k))
}

pub fn mean_average_precision(
    query: &EmbeddingSet,
    gallery: &EmbeddingSet,
    opts: &EvalOptions,
) -> Result<f64> {
    Ok(evaluate(query, gallery, opts)?.mean_average_precision())
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidConfig("CMC rank k must be at least 1".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub query_tag: String,
    pub gallery_tag: String,
    pub cmc_top_k: BTreeMap<usize, f64>,
    pub map_score: f64,
    pub num_queries: usize,
    pub excluded_from_map: usize,
    pub options: EvalOptions,
}

impl RetrievalReport {
    pub fn from_evaluation(
        eval: &Evaluation,
        ks: &[usize],
        opts: &EvalOptions,
        query_tag: impl Into<String>,
        gallery_tag: impl Into<String>,
    ) -> Result<Self> {
        let mut cmc_top_k = BTreeMap::new();
        for &k in ks {
            check_k(k)?;
            cmc_top_k.insert(k, eval.cmc(k));
        }
        Ok(Self {
            query_tag: query_tag.into(),
            gallery_tag: gallery_tag.into(),
            cmc_top_k,
            map_score: eval.mean_average_precision(),
            num_queries: eval.outcomes.len(),
            excluded_from_map: eval.excluded_from_map(),
            options: *opts,
        })
    }

    pub fn top1(&self) -> Option<f64> {
        self.cmc_top_k.get(&1).copied()
    }
}

/// Evaluates `query` against `gallery` and summarizes CMC at each `k` plus
/// mAP. Tags default to the sets' model tags.
pub fn retrieval_report(
    query: &EmbeddingSet,
    gallery: &EmbeddingSet,
    ks: &[usize],
    opts: &EvalOptions,
) -> Result<RetrievalReport> {
    let eval = evaluate(query, gallery, opts)?;
    RetrievalReport::from_evaluation(&eval, ks, opts, query.model_tag(), gallery.model_tag())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompatibilityVerdict {
    pub cross_model: RetrievalReport,
    pub self_old: RetrievalReport,
    pub cmc_top1_satisfied: bool,
    pub map_satisfied: bool,
}

impl CompatibilityVerdict {
    pub fn satisfied(&self) -> bool {
        self.cmc_top1_satisfied && self.map_satisfied
    }
}

/// Cross-model retrieval (new queries, old gallery) must strictly beat
/// old-to-old retrieval, separately for CMC-Top1 and mAP.
pub fn compatibility_verdict(
    query_new: &EmbeddingSet,
    gallery_old: &EmbeddingSet,
    query_old: &EmbeddingSet,
    opts: &EvalOptions,
) -> Result<CompatibilityVerdict> {
    let ks = [1];
    let cross_model = retrieval_report(query_new, gallery_old, &ks, opts)?;
    let self_old = retrieval_report(query_old, gallery_old, &ks, opts)?;
    Ok(CompatibilityVerdict {
        cmc_top1_satisfied: cross_model.cmc_top_k[&1] > self_old.cmc_top_k[&1],
        map_satisfied: cross_model.map_score > self_old.map_score,
        cross_model,
        self_old,
    })
}
