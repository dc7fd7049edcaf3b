//! On-disk bundle directory:
//!
//! - `manifest.json`: `{dim, count, dtype: "f32le", model_tag, has_labels}`
//! - `vectors.bin`: `count × dim` little-endian `f32`, row-major, no header
//! - `labels.txt`: one base-10 label per line, present iff `has_labels`
//!
//! Vectors are held as `f64` in memory and narrowed to `f32` on save, so a
//! save→load round trip is exact for any set that was itself loaded from a
//! bundle (or whose values are `f32`-representable).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const VECTORS_FILE: &str = "vectors.bin";
pub const LABELS_FILE: &str = "labels.txt";
pub const DTYPE: &str = "f32le";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub dim: usize,
    pub count: usize,
    pub dtype: String,
    pub model_tag: String,
    pub has_labels: bool,
}

pub fn save_bundle(set: &EmbeddingSet, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;

    let mut payload = Vec::with_capacity(set.count() * set.dim() * 4);
    for (p, &v) in set.vectors().data().iter().enumerate() {
        let narrowed = v as f32;
        if !narrowed.is_finite() {
            return Err(Error::NonFiniteValue {
                row: p / set.dim(),
                col: p % set.dim(),
            });
        }
        payload.extend_from_slice(&narrowed.to_le_bytes());
    }

    let manifest = Manifest {
        dim: set.dim(),
        count: set.count(),
        dtype: DTYPE.to_string(),
        model_tag: set.model_tag().to_string(),
        has_labels: set.labels().is_some(),
    };
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    fs::write(dir.join(MANIFEST_FILE), json)?;
    fs::write(dir.join(VECTORS_FILE), payload)?;

    let labels_path = dir.join(LABELS_FILE);
    match set.labels() {
        Some(labels) => {
            let mut text = String::with_capacity(labels.len() * 4);
            for l in labels {
                text.push_str(&l.to_string());
                text.push('\n');
            }
            fs::write(labels_path, text)?;
        }
        None => {
            if labels_path.exists() {
                fs::remove_file(labels_path)?;
            }
        }
    }
    Ok(())
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let path = dir.as_ref().join(MANIFEST_FILE);
    if !path.is_file() {
        return Err(Error::MissingFile(path));
    }
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

pub fn load_bundle(dir: impl AsRef<Path>) -> Result<EmbeddingSet> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    if manifest.dtype != DTYPE {
        return Err(Error::ManifestMismatch(format!(
            "dtype {:?}, expected {DTYPE:?}",
            manifest.dtype
        )));
    }
    if manifest.dim == 0 || manifest.count == 0 {
        return Err(Error::ManifestMismatch(
            "dim and count must be positive".into(),
        ));
    }

    let vectors_path = dir.join(VECTORS_FILE);
    if !vectors_path.is_file() {
        return Err(Error::MissingFile(vectors_path));
    }
    let bytes = fs::read(&vectors_path)?;
    let expected = manifest.count * manifest.dim * 4;
    if bytes.len() != expected {
        return Err(Error::ManifestMismatch(format!(
            "manifest declares {}x{} ({expected} bytes), payload has {} bytes",
            manifest.count,
            manifest.dim,
            bytes.len()
        )));
    }
    let data: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let vectors = Matrix::from_vec(manifest.count, manifest.dim, data)?;

    let labels = if manifest.has_labels {
        let path = dir.join(LABELS_FILE);
        if !path.is_file() {
            return Err(Error::MissingFile(path));
        }
        let text = fs::read_to_string(path)?;
        let labels = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.trim()
                    .parse::<u32>()
                    .map_err(|e| Error::ManifestMismatch(format!("bad label {l:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if labels.len() != manifest.count {
            return Err(Error::ManifestMismatch(format!(
                "{} labels for {} vectors",
                labels.len(),
                manifest.count
            )));
        }
        Some(labels)
    } else {
        None
    };

    EmbeddingSet::new(vectors, labels, manifest.model_tag)
}
