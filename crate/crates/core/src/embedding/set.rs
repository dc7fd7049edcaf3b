use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Embedding vectors produced by one model, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    vectors: Matrix,
    labels: Option<Vec<u32>>,
    model_tag: String,
}

impl EmbeddingSet {
    pub fn new(
        vectors: Matrix,
        labels: Option<Vec<u32>>,
        model_tag: impl Into<String>,
    ) -> Result<Self> {
        if vectors.rows() == 0 || vectors.cols() == 0 {
            return Err(Error::shape(
                "at least one sample of positive dimension",
                format!("{}x{}", vectors.rows(), vectors.cols()),
            ));
        }
        if let Some((row, col)) = vectors.first_non_finite() {
            return Err(Error::NonFiniteValue { row, col });
        }
        if let Some(l) = &labels {
            if l.len() != vectors.rows() {
                return Err(Error::shape(
                    format!("{} labels", vectors.rows()),
                    format!("{} labels", l.len()),
                ));
            }
        }
        Ok(Self {
            vectors,
            labels,
            model_tag: model_tag.into(),
        })
    }

    pub fn count(&self) -> usize {
        self.vectors.rows()
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn vectors(&self) -> &Matrix {
        &self.vectors
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        self.vectors.row(i)
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn require_labels(&self) -> Result<&[u32]> {
        self.labels().ok_or(Error::MissingLabels)
    }

    pub fn model_tag(&self) -> &str {
        &self.model_tag
    }

    /// Same labels, new vectors (e.g. after applying a map).
    pub fn with_vectors(&self, vectors: Matrix, model_tag: impl Into<String>) -> Result<Self> {
        if vectors.rows() != self.count() {
            return Err(Error::Misaligned(format!(
                "{} rows for a set of {}",
                vectors.rows(),
                self.count()
            )));
        }
        Self::new(vectors, self.labels.clone(), model_tag)
    }

    /// Keeps the leading `k` coordinates of every vector.
    pub fn truncate(&self, k: usize) -> Result<Self> {
        if k == self.dim() {
            return Ok(self.clone());
        }
        Self::new(
            self.vectors.truncate_cols(k)?,
            self.labels.clone(),
            self.model_tag.clone(),
        )
    }

    pub fn without_labels(&self) -> Self {
        Self {
            labels: None,
            ..self.clone()
        }
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            vectors: self.vectors.select_rows(indices),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            model_tag: self.model_tag.clone(),
        }
    }

    /// Row indices grouped by label, in ascending label order.
    pub fn class_members(&self) -> Result<BTreeMap<u32, Vec<usize>>> {
        let mut out: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, &l) in self.require_labels()?.iter().enumerate() {
            out.entry(l).or_default().push(i);
        }
        Ok(out)
    }
}

/// Old- and new-model embeddings of the same samples, aligned by row.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedEmbeddings {
    pub old: EmbeddingSet,
    pub new: EmbeddingSet,
}

impl PairedEmbeddings {
    pub fn new(old: EmbeddingSet, new: EmbeddingSet) -> Result<Self> {
        if old.count() != new.count() {
            return Err(Error::Misaligned(format!(
                "old has {} rows, new has {}",
                old.count(),
                new.count()
            )));
        }
        match (old.labels(), new.labels()) {
            (Some(a), Some(b)) if a != b => {
                return Err(Error::Misaligned("labels differ row-wise".into()));
            }
            _ => {}
        }
        Ok(Self { old, new })
    }

    pub fn count(&self) -> usize {
        self.old.count()
    }

    /// Labels from whichever side carries them.
    pub fn labels(&self) -> Option<&[u32]> {
        self.old.labels().or(self.new.labels())
    }

    /// Dimension shared by square backward maps: the smaller of the two.
    pub fn common_dim(&self) -> usize {
        self.old.dim().min(self.new.dim())
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            old: self.old.select(indices),
            new: self.new.select(indices),
        }
    }
}
