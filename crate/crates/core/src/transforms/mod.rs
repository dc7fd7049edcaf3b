//! Learnable maps between embedding spaces.
//!
//! Backward maps send new-model embeddings into the old space and are square:
//! when the two spaces differ in dimension, both sides are truncated to the
//! leading `min(d_old, d_new)` coordinates first. Forward maps send full
//! old-model embeddings into that same (possibly truncated) space.

mod affine;
mod io;
mod mlp;
mod orthogonal;
mod procrustes;

pub use affine::AffineMap;
pub use io::{deserialize_map, read_map, serialize_map, write_map, MAP_MAGIC};
pub use mlp::{Activation, MlpMap};
pub use orthogonal::OrthogonalMap;
pub use procrustes::{alignment_mse, procrustes_fit, ProcrustesFit};

use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// How mismatched dimensions are reconciled before a square backward map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TruncationRule {
    /// Keep the first `k` coordinates.
    #[default]
    Leading,
}

impl TruncationRule {
    pub fn apply(self, x: &[f64], target_dim: usize) -> Result<Vec<f64>> {
        match self {
            TruncationRule::Leading => truncate_to(x, target_dim),
        }
    }
}

pub fn truncate_to(x: &[f64], target_dim: usize) -> Result<Vec<f64>> {
    if target_dim > x.len() {
        return Err(Error::TargetTooLarge {
            dim: x.len(),
            target: target_dim,
        });
    }
    Ok(x[..target_dim].to_vec())
}

#[derive(Debug, Clone, PartialEq)]
pub enum Transform {
    Orthogonal(OrthogonalMap),
    Affine(AffineMap),
    Mlp(MlpMap),
}

impl Transform {
    pub fn kind(&self) -> &'static str {
        match self {
            Transform::Orthogonal(_) => "orthogonal",
            Transform::Affine(_) => "affine",
            Transform::Mlp(_) => "mlp",
        }
    }

    pub fn in_dim(&self) -> usize {
        match self {
            Transform::Orthogonal(m) => m.dim(),
            Transform::Affine(m) => m.in_dim(),
            Transform::Mlp(m) => m.in_dim(),
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            Transform::Orthogonal(m) => m.dim(),
            Transform::Affine(m) => m.out_dim(),
            Transform::Mlp(m) => m.out_dim(),
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            Transform::Orthogonal(m) => m.skew_params().len(),
            Transform::Affine(m) => m.num_params(),
            Transform::Mlp(m) => m.num_params(),
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match self {
            Transform::Orthogonal(m) => m.skew_params().to_vec(),
            Transform::Affine(m) => m.params(),
            Transform::Mlp(m) => m.params(),
        }
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        match self {
            Transform::Orthogonal(m) => m.set_params(params),
            Transform::Affine(m) => m.set_params(params),
            Transform::Mlp(m) => m.set_params(params),
        }
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        match self {
            Transform::Orthogonal(m) => m.apply(x),
            Transform::Affine(m) => m.apply(x),
            Transform::Mlp(m) => m.apply(x),
        }
    }

    pub fn apply_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Transform::Orthogonal(m) => m.apply_vec(x),
            Transform::Affine(m) => m.apply_vec(x),
            Transform::Mlp(m) => m.apply_vec(x),
        }
    }

    /// Applies the map after truncating inputs wider than `in_dim`.
    pub fn apply_truncating(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() > self.in_dim() {
            self.apply(&x.truncate_cols(self.in_dim())?)
        } else {
            self.apply(x)
        }
    }

    /// Maps every vector of `set` (truncating as above), keeping labels.
    pub fn apply_set(
        &self,
        set: &EmbeddingSet,
        model_tag: impl Into<String>,
    ) -> Result<EmbeddingSet> {
        set.with_vectors(self.apply_truncating(set.vectors())?, model_tag)
    }

    /// Parameter and input gradients given `∂L/∂Y` for `Y = apply(X)`.
    pub fn backward(&self, x: &Matrix, grad_out: &Matrix) -> Result<(Vec<f64>, Matrix)> {
        match self {
            Transform::Orthogonal(m) => m.backward(x, grad_out),
            Transform::Affine(m) => m.backward(x, grad_out),
            Transform::Mlp(m) => m.backward(x, grad_out),
        }
    }

    /// The linear part for single-matrix maps (`None` for MLPs).
    pub fn linear_part(&self) -> Option<&Matrix> {
        match self {
            Transform::Orthogonal(m) => Some(m.matrix()),
            Transform::Affine(m) => Some(m.weight()),
            Transform::Mlp(_) => None,
        }
    }

    /// `‖W·Wᵀ − I‖_F` of the linear part.
    pub fn gram_deviation(&self) -> Option<f64> {
        self.linear_part()
            .map(|w| w.outer_gram_deviation().frobenius_norm())
    }
}

impl From<OrthogonalMap> for Transform {
    fn from(m: OrthogonalMap) -> Self {
        Transform::Orthogonal(m)
    }
}

impl From<AffineMap> for Transform {
    fn from(m: AffineMap) -> Self {
        Transform::Affine(m)
    }
}

impl From<MlpMap> for Transform {
    fn from(m: MlpMap) -> Self {
        Transform::Mlp(m)
    }
}
