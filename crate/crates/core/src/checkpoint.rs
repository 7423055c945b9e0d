//! Self-describing model archive.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "FGCKPT\0\0"
//! version  u32
//! hlen     u64      length of the JSON header
//! header   hlen     {"encoder_kind", "config", "tensors": [{"name","shape"}...]}
//! blob              f32 values of each tensor, in header order
//! digest   32 bytes SHA-256 of everything above
//! ```
//!
//! The config carries the projection-head layout and the preprocessing
//! constants, so a loaded model embeds exactly like the saved one.

use std::fs;
use std::path::Path;

use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embed::{EncoderKind, Model, ModelConfig};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FGCKPT\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    encoder_kind: EncoderKind,
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let state = model.state();
    let encoder_kind = match model.config().backbone {
        crate::embed::BackboneConfig::ReferenceCnn => EncoderKind::ReferenceCnn,
        crate::embed::BackboneConfig::ToyCnn { .. } => EncoderKind::ToyCnn,
    };
    let header = Header {
        encoder_kind,
        config: *model.config(),
        tensors: state
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                shape: t.dims().to_vec(),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header);
    for (_, t) in &state {
        for v in t.flatten_all()?.to_vec1::<f32>()? {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = fs::read(path)?;
    let fail = |msg: &str| Error::Integrity(format!("{}: {msg}", path.display()));
    if bytes.len() < 8 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(fail("not a checkpoint file"));
    }
    if bytes.len() < 20 + 32 {
        return Err(fail("file is truncated"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::Incompatible {
            what: "checkpoint",
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(fail("checksum mismatch (truncated or corrupted)"));
    }
    let hlen = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
    let header_end = 20usize
        .checked_add(hlen)
        .filter(|&e| e <= body.len())
        .ok_or_else(|| fail("header overruns file"))?;
    let header: Header = serde_json::from_slice(&body[20..header_end])?;

    let mut offset = header_end;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for entry in &header.tensors {
        let n: usize = entry.shape.iter().product();
        let end = offset + 4 * n;
        if end > body.len() {
            return Err(fail("tensor data overruns file"));
        }
        let values: Vec<f32> = body[offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        tensors.push((
            entry.name.clone(),
            Tensor::from_vec(values, entry.shape.as_slice(), &Device::Cpu)?,
        ));
        offset = end;
    }
    if offset != body.len() {
        return Err(fail("trailing bytes after tensor data"));
    }
    Model::from_tensors(header.config, &tensors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{HeadVariant, ImageEmbedder, PreprocessedImage, ProbePoint, WeightsSource};

    fn model(head: HeadVariant) -> Model {
        Model::new(ModelConfig::toy(16, 8, head), &WeightsSource::Random { seed: 4 }).unwrap()
    }

    fn images() -> Vec<PreprocessedImage> {
        (0..3)
            .map(|k| PreprocessedImage {
                size: 8,
                data: (0..192).map(|i| ((i * (k + 3)) % 17) as f32 / 17.0 - 0.5).collect(),
            })
            .collect()
    }

    #[test]
    fn round_trip_reproduces_embeddings() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = model(HeadVariant::Mlp);
        save_checkpoint(&m, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.fingerprint(), m.fingerprint());
        for probe in ProbePoint::BOTH {
            let a = m.embed(&images(), probe).unwrap();
            let b = loaded.embed(&images(), probe).unwrap();
            assert_eq!(a, b);
            assert!(a.iter().zip(&b).all(|(x, y)| (x.cosine(y) - 1.0).abs() < 1e-6));
        }
        assert_eq!(loaded.config().head.variant, HeadVariant::Mlp);
        assert_eq!(loaded.probe_dim(ProbePoint::ProjectionOutput), Some(128));
    }

    #[test]
    fn truncated_file_fails_integrity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&model(HeadVariant::Linear), &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Integrity(_))));
    }

    #[test]
    fn other_version_is_incompatible() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&model(HeadVariant::Linear), &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[8..12].copy_from_slice(&7u32.to_le_bytes());
        fs::write(&path, bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Incompatible { found: 7, .. })));
    }
}
