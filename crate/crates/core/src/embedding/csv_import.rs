use std::path::Path;

use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Reads `label,x0,x1,...` rows. An empty label column everywhere yields an
/// unlabeled set; a mix of empty and present labels is an error.
pub fn load_csv(path: impl AsRef<Path>, model_tag: &str) -> Result<EmbeddingSet> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.get(0) != Some("label") || headers.len() < 2 {
        return Err(Error::ManifestMismatch(
            "CSV header must be `label,x0,x1,...`".into(),
        ));
    }
    let dim = headers.len() - 1;

    let mut data = Vec::new();
    let mut labels: Vec<Option<u32>> = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let label = record.get(0).unwrap_or("");
        labels.push(if label.is_empty() {
            None
        } else {
            Some(label.parse().map_err(|e| {
                Error::ManifestMismatch(format!("row {row}: bad label {label:?}: {e}"))
            })?)
        });
        for col in 0..dim {
            let field = record.get(col + 1).unwrap_or("");
            let v: f64 = field.parse().map_err(|e| {
                Error::ManifestMismatch(format!("row {row}, column {col}: {field:?}: {e}"))
            })?;
            data.push(v);
        }
    }
    let count = labels.len();
    let labels = if labels.iter().all(Option::is_none) {
        None
    } else if labels.iter().all(Option::is_some) {
        Some(labels.into_iter().flatten().collect())
    } else {
        return Err(Error::ManifestMismatch("some rows lack labels".into()));
    };
    EmbeddingSet::new(Matrix::from_vec(count, dim, data)?, labels, model_tag)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_labeled_and_unlabeled() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        std::fs::write(&p, "label,x0,x1\n0,1.5,2\n3,-1,0.25\n").unwrap();
        let s = load_csv(&p, "csv").unwrap();
        assert_eq!(s.labels(), Some(&[0, 3][..]));
        assert_eq!(s.vector(1), &[-1.0, 0.25]);

        std::fs::write(&p, "label,x0\n,1\n,2\n").unwrap();
        assert!(load_csv(&p, "csv").unwrap().labels().is_none());

        std::fs::write(&p, "label,x0\n1,1\n,2\n").unwrap();
        assert!(load_csv(&p, "csv").is_err());

        std::fs::write(&p, "id,x0\n1,1\n").unwrap();
        assert!(load_csv(&p, "csv").is_err());
    }
}
