use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::transforms::{Activation, AffineMap, MlpMap, OrthogonalMap, Transform};

pub const MAP_MAGIC: &[u8; 8] = b"LALNMAP1";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct LayerSpec {
    in_dim: usize,
    out_dim: usize,
    activation: Activation,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct Header {
    version: u32,
    kind: String,
    in_dim: usize,
    out_dim: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    layers: Vec<LayerSpec>,
    num_params: usize,
}

pub fn serialize_map(map: &Transform) -> Vec<u8> {
    let layers = match map {
        Transform::Mlp(m) => m
            .layers()
            .iter()
            .map(|(l, a)| LayerSpec {
                in_dim: l.in_dim(),
                out_dim: l.out_dim(),
                activation: *a,
            })
            .collect(),
        _ => Vec::new(),
    };
    let header = Header {
        version: FORMAT_VERSION,
        kind: map.kind().to_string(),
        in_dim: map.in_dim(),
        out_dim: map.out_dim(),
        layers,
        num_params: map.num_params(),
    };
    let mut out = MAP_MAGIC.to_vec();
    out.extend(serde_json::to_vec(&header).expect("header serializes"));
    out.push(b'\n');
    for p in map.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub fn deserialize_map(bytes: &[u8]) -> Result<Transform> {
    if bytes.len() < MAP_MAGIC.len() || &bytes[..MAP_MAGIC.len()] != MAP_MAGIC {
        return Err(Error::FormatVersionMismatch("bad magic bytes".into()));
    }
    let rest = &bytes[MAP_MAGIC.len()..];
    let nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::FormatVersionMismatch("unterminated header".into()))?;
    let header: Header = serde_json::from_slice(&rest[..nl])?;
    if header.version != FORMAT_VERSION {
        return Err(Error::FormatVersionMismatch(format!(
            "version {}",
            header.version
        )));
    }
    let payload = &rest[nl + 1..];
    if payload.len() != header.num_params * 8 {
        return Err(Error::FormatVersionMismatch(format!(
            "expected {} parameter bytes, found {}",
            header.num_params * 8,
            payload.len()
        )));
    }
    let params: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();

    let mut map: Transform = match header.kind.as_str() {
        "orthogonal" => {
            if header.in_dim != header.out_dim {
                return Err(Error::FormatVersionMismatch(
                    "non-square orthogonal map".into(),
                ));
            }
            OrthogonalMap::identity(header.in_dim).into()
        }
        "affine" => AffineMap::new(
            Matrix::zeros(header.out_dim, header.in_dim),
            vec![0.0; header.out_dim],
        )?
        .into(),
        "mlp" => {
            let layers = header
                .layers
                .iter()
                .map(|l| {
                    AffineMap::new(Matrix::zeros(l.out_dim, l.in_dim), vec![0.0; l.out_dim])
                        .map(|m| (m, l.activation))
                })
                .collect::<Result<Vec<_>>>()?;
            MlpMap::new(layers)?.into()
        }
        other => {
            return Err(Error::FormatVersionMismatch(format!(
                "unknown map kind {other:?}"
            )))
        }
    };
    if map.in_dim() != header.in_dim || map.out_dim() != header.out_dim {
        return Err(Error::FormatVersionMismatch(
            "header dims disagree with layers".into(),
        ));
    }
    if map.num_params() != header.num_params {
        return Err(Error::FormatVersionMismatch(
            "parameter count disagrees with layers".into(),
        ));
    }
    if !params.iter().all(|p| p.is_finite()) {
        return Err(Error::InvalidConfig("map parameters must be finite".into()));
    }
    map.set_params(&params)?;
    Ok(map)
}

pub fn write_map(path: &Path, map: &Transform) -> Result<()> {
    fs::write(path, serialize_map(map))?;
    Ok(())
}

pub fn read_map(path: &Path) -> Result<Transform> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    deserialize_map(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn affine_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut map = AffineMap::random(5, 3, 1.0, &mut rng);
        let mut p = map.params();
        for (i, v) in p.iter_mut().enumerate().skip(15) {
            *v = i as f64 * 0.1;
        }
        map.set_params(&p).unwrap();
        let t = Transform::from(map);
        let back = deserialize_map(&serialize_map(&t)).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn orthogonal_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = Transform::from(OrthogonalMap::random(6, 0.3, &mut rng));
        let back = deserialize_map(&serialize_map(&t)).unwrap();
        assert_eq!(back.params(), t.params());
        let diff = back.linear_part().unwrap() - t.linear_part().unwrap();
        assert!(diff.data().iter().all(|v| v.abs() <= 1e-12));
    }

    #[test]
    fn mlp_round_trip_through_file() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let t = Transform::from(MlpMap::two_layer(4, 6, &mut rng));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.map");
        write_map(&path, &t).unwrap();
        assert_eq!(read_map(&path).unwrap(), t);
    }

    #[test]
    fn header_layout() {
        let bytes = serialize_map(&AffineMap::identity(1).into());
        assert_eq!(&bytes[..8], b"LALNMAP1");
        let nl = bytes.iter().position(|&b| b == b'\n').unwrap();
        assert_eq!(bytes.len() - nl - 1, 16);
        assert_eq!(&bytes[nl + 1..nl + 9], &1.0f64.to_le_bytes());
    }

    #[test]
    fn rejects_bad_magic() {
        let mut bytes = serialize_map(&AffineMap::identity(2).into());
        bytes[7] = b'2';
        assert!(matches!(
            deserialize_map(&bytes),
            Err(Error::FormatVersionMismatch(_))
        ));
        assert!(matches!(
            deserialize_map(b"LAL"),
            Err(Error::FormatVersionMismatch(_))
        ));
    }

    #[test]
    fn rejects_truncated_payload() {
        let mut bytes = serialize_map(&AffineMap::identity(2).into());
        bytes.pop();
        assert!(deserialize_map(&bytes).is_err());
    }

    #[test]
    fn missing_file() {
        assert!(matches!(
            read_map(Path::new("/nonexistent/x.map")),
            Err(Error::MissingFile(_))
        ));
    }
}
