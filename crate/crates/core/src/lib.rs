//! Learned transformations that make an updated embedding model compatible
//! with an older one.
//!
//! The crate covers the whole pipeline on pre-extracted embeddings: strictly
//! orthogonal and λ-orthogonality regularized backward maps, forward maps,
//! the alignment and contrastive objectives with analytic gradients, Adam
//! training, retrieval metrics (CMC, mAP) with compatibility checks, and
//! partial gallery backfilling.

pub mod backfill;
pub mod diagnostics;
pub mod embedding;
pub mod error;
pub mod linalg;
pub mod losses;
pub mod retrieval;
pub mod trainer;
pub mod transforms;

pub use embedding::{EmbeddingSet, PairedEmbeddings};
pub use error::{Error, Result};
pub use linalg::Matrix;
