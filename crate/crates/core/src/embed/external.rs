use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{EmbeddingVector, ImageEmbedder, ProbePoint};
use crate::error::{Error, Result};

/// Source of embeddings computed outside this crate (a frozen foundation
/// model, a remote service, a precomputed table).
///
/// Given image paths, returns one `(path, vector, dim)` triple per path in
/// request order.
pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> String;

    fn embed(&self, paths: &[PathBuf]) -> Result<Vec<(PathBuf, Vec<f32>, usize)>>;
}

/// Inference-only encoder backed by an [`EmbeddingProvider`]. It exposes the
/// provider's output as the encoder probe; there is no projection head.
pub struct ExternalEncoder {
    provider: Box<dyn EmbeddingProvider>,
    dim: usize,
}

impl ExternalEncoder {
    pub fn new(provider: Box<dyn EmbeddingProvider>, dim: usize) -> Self {
        ExternalEncoder { provider, dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

impl ImageEmbedder for ExternalEncoder {
    fn fingerprint(&self) -> String {
        format!("external:{}:{}", self.provider.name(), self.dim)
    }

    fn probe_dim(&self, probe: ProbePoint) -> Option<usize> {
        (probe == ProbePoint::EncoderOutput).then_some(self.dim)
    }

    fn embed_paths(&self, paths: &[PathBuf], probe: ProbePoint) -> Result<Vec<EmbeddingVector>> {
        if probe != ProbePoint::EncoderOutput {
            return Err(Error::Config(format!(
                "external encoder {} only exposes the encoder_output probe",
                self.provider.name()
            )));
        }
        let triples = self.provider.embed(paths)?;
        if triples.len() != paths.len() {
            return Err(Error::Contract(format!(
                "{} returned {} embeddings for {} images",
                self.provider.name(),
                triples.len(),
                paths.len()
            )));
        }
        triples
            .into_iter()
            .zip(paths)
            .map(|((path, vector, dim), requested)| {
                if &path != requested {
                    return Err(Error::Contract(format!(
                        "expected an embedding for {}, got {}",
                        requested.display(),
                        path.display()
                    )));
                }
                if dim != self.dim || vector.len() != self.dim {
                    return Err(Error::Contract(format!(
                        "{} gave a {}-d vector (declared {dim}) for {}, expected {}",
                        self.provider.name(),
                        vector.len(),
                        path.display(),
                        self.dim
                    )));
                }
                EmbeddingVector::normalize(vector, probe)
            })
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
struct EmbeddingLine {
    path: PathBuf,
    vector: Vec<f32>,
    dim: usize,
}

/// Provider reading precomputed embeddings from a JSON-lines file of
/// `{"path": ..., "vector": [...], "dim": n}` records. Relative paths are
/// resolved against the file's directory.
pub struct EmbeddingFileProvider {
    name: String,
    table: HashMap<PathBuf, (Vec<f32>, usize)>,
}

impl EmbeddingFileProvider {
    pub fn open(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Resource(format!("embedding file {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        let mut table = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: EmbeddingLine = serde_json::from_str(line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })?;
            let key = if rec.path.is_absolute() { rec.path } else { base.join(rec.path) };
            table.insert(key, (rec.vector, rec.dim));
        }
        Ok(EmbeddingFileProvider {
            name: path.display().to_string(),
            table,
        })
    }

    /// The dimension shared by all records, if they agree.
    pub fn dim(&self) -> Option<usize> {
        let mut dims = self.table.values().map(|(_, d)| *d);
        let first = dims.next()?;
        dims.all(|d| d == first).then_some(first)
    }

    /// Writes `(path, vector)` records in the format [`open`](Self::open) reads.
    pub fn write(path: &Path, records: &[(PathBuf, Vec<f32>)]) -> Result<()> {
        let mut out = String::new();
        for (p, v) in records {
            let line = EmbeddingLine {
                path: p.clone(),
                vector: v.clone(),
                dim: v.len(),
            };
            out.push_str(&serde_json::to_string(&line)?);
            out.push('\n');
        }
        fs::write(path, out)?;
        Ok(())
    }
}

impl EmbeddingProvider for EmbeddingFileProvider {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn embed(&self, paths: &[PathBuf]) -> Result<Vec<(PathBuf, Vec<f32>, usize)>> {
        paths
            .iter()
            .map(|p| {
                let (v, d) = self
                    .table
                    .get(p)
                    .ok_or_else(|| Error::Contract(format!("no embedding recorded for {}", p.display())))?;
                Ok((p.clone(), v.clone(), *d))
            })
            .collect()
    }
}
