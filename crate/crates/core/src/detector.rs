//! Embedding index over original artworks and the threshold/top-k decision.
//!
//! Index file layout (little-endian):
//!
//! ```text
//! magic        8 bytes  "FGINDEX\0"
//! version      u32
//! dim          u32
//! probe        u8       0 = encoder_output, 1 = projection_output
//! count        u64
//! fp_len       u16, then fp_len bytes of UTF-8 model fingerprint
//! vectors      count × dim f32, row-major
//! ids          count × (u32 length, UTF-8 bytes)
//! ```

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embed::{cosine, EmbeddingVector, ImageEmbedder, ProbePoint};
use crate::error::{Error, Result};
use crate::loss::UNIT_NORM_TOLERANCE;

pub const INDEX_MAGIC: &[u8; 8] = b"FGINDEX\0";
pub const INDEX_VERSION: u32 = 1;
pub const DEFAULT_TOP_K: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    ids: Vec<String>,
    vectors: Vec<EmbeddingVector>,
    probe: ProbePoint,
    dim: usize,
    model_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub artwork_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionVerdict {
    pub query_id: String,
    pub best_match: String,
    pub best_score: f64,
    pub infringing: bool,
    pub topk: Vec<Match>,
    pub threshold_used: f64,
}

impl EmbeddingIndex {
    /// Validates unit norm, a shared dimension and unique ids.
    pub fn new(
        entries: Vec<(String, EmbeddingVector)>,
        probe: ProbePoint,
        dim: usize,
        model_fingerprint: String,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut ids = Vec::with_capacity(entries.len());
        let mut vectors = Vec::with_capacity(entries.len());
        for (i, (id, v)) in entries.into_iter().enumerate() {
            if !seen.insert(id.clone()) {
                return Err(Error::DuplicateId(id));
            }
            if v.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: v.dim() });
            }
            let norm = v.norm();
            if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
                return Err(Error::NotNormalized { index: i, norm });
            }
            ids.push(id);
            vectors.push(v);
        }
        Ok(EmbeddingIndex { ids, vectors, probe, dim, model_fingerprint })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn probe(&self) -> ProbePoint {
        self.probe
    }

    pub fn model_fingerprint(&self) -> &str {
        &self.model_fingerprint
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &EmbeddingVector)> {
        self.ids.iter().map(String::as_str).zip(&self.vectors)
    }

    /// Cosine score against every entry, in index order.
    pub fn scores(&self, query: &[f32]) -> Result<Vec<f64>> {
        if query.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: query.len() });
        }
        Ok(self.vectors.iter().map(|v| cosine(&v.values, query)).collect())
    }

    /// The `k` best entries by score; equal scores keep index order.
    pub fn top_k(&self, query: &[f32], k: usize) -> Result<Vec<Match>> {
        let scores = self.scores(query)?;
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        Ok(order
            .into_iter()
            .take(k)
            .map(|i| Match { artwork_id: self.ids[i].clone(), score: scores[i] })
            .collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let fp = self.model_fingerprint.as_bytes();
        let mut buf = Vec::with_capacity(32 + fp.len() + self.len() * (4 * self.dim + 16));
        buf.extend_from_slice(INDEX_MAGIC);
        buf.extend_from_slice(&INDEX_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        buf.push(self.probe.code());
        buf.extend_from_slice(&(self.len() as u64).to_le_bytes());
        buf.extend_from_slice(&(fp.len() as u16).to_le_bytes());
        buf.extend_from_slice(fp);
        for v in &self.vectors {
            for x in &v.values {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        for id in &self.ids {
            buf.extend_from_slice(&(id.len() as u32).to_le_bytes());
            buf.extend_from_slice(id.as_bytes());
        }
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        let mut r = Reader { bytes: &bytes, pos: 0, path };
        if r.take(8)? != INDEX_MAGIC {
            return Err(r.fail("not an index file"));
        }
        let version = r.u32()?;
        if version != INDEX_VERSION {
            return Err(Error::Incompatible { what: "index", found: version, expected: INDEX_VERSION });
        }
        let dim = r.u32()? as usize;
        let probe = ProbePoint::from_code(r.take(1)?[0]).ok_or_else(|| r.fail("unknown probe code"))?;
        let count = r.u64()? as usize;
        let fp_len = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes")) as usize;
        let fingerprint = String::from_utf8(r.take(fp_len)?.to_vec()).map_err(|_| r.fail("fingerprint is not UTF-8"))?;
        let mut vectors = Vec::with_capacity(count);
        for _ in 0..count {
            let raw = r.take(4 * dim)?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            vectors.push(EmbeddingVector { values, probe, normalized: true });
        }
        let mut entries = Vec::with_capacity(count);
        for v in vectors {
            let len = r.u32()? as usize;
            let id = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| r.fail("artwork id is not UTF-8"))?;
            entries.push((id, v));
        }
        if r.pos != bytes.len() {
            return Err(r.fail("trailing bytes after id table"));
        }
        EmbeddingIndex::new(entries, probe, dim, fingerprint)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn fail(&self, msg: &str) -> Error {
        Error::Integrity(format!("{}: {msg}", self.path.display()))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(self.fail("file is truncated")),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Embeds each original once. Ids must be unique.
pub fn build_index<E: ImageEmbedder>(
    originals: &[(String, PathBuf)],
    embedder: &E,
    probe: ProbePoint,
) -> Result<EmbeddingIndex> {
    let dim = embedder
        .probe_dim(probe)
        .ok_or_else(|| Error::Config(format!("encoder does not expose the {probe} probe")))?;
    let mut seen = HashSet::new();
    for (id, _) in originals {
        if !seen.insert(id.as_str()) {
            return Err(Error::DuplicateId(id.clone()));
        }
    }
    let paths: Vec<PathBuf> = originals.iter().map(|(_, p)| p.clone()).collect();
    let vectors = embedder.embed_paths(&paths, probe)?;
    let entries = originals.iter().map(|(id, _)| id.clone()).zip(vectors).collect();
    EmbeddingIndex::new(entries, probe, dim, embedder.fingerprint())
}

fn check_query_args(index: &EmbeddingIndex, threshold: f64, k: usize) -> Result<()> {
    if index.is_empty() {
        return Err(Error::EmptyIndex);
    }
    if k == 0 || k > index.len() {
        return Err(Error::Config(format!("k must lie in [1, {}], got {k}", index.len())));
    }
    if !(-1.0..=1.0).contains(&threshold) {
        return Err(Error::Config(format!("threshold must lie in [-1, 1], got {threshold}")));
    }
    Ok(())
}

/// Decision for an already-embedded query. `score >= threshold` infringes.
pub fn query_vector(
    index: &EmbeddingIndex,
    query_id: &str,
    query: &EmbeddingVector,
    threshold: f64,
    k: usize,
) -> Result<DetectionVerdict> {
    check_query_args(index, threshold, k)?;
    if query.probe != index.probe {
        return Err(Error::Config(format!(
            "query embedded at {} but index holds {} vectors",
            query.probe, index.probe
        )));
    }
    let topk = index.top_k(&query.values, k)?;
    let best = topk[0].clone();
    Ok(DetectionVerdict {
        query_id: query_id.to_string(),
        infringing: best.score >= threshold,
        best_match: best.artwork_id,
        best_score: best.score,
        topk,
        threshold_used: threshold,
    })
}

pub fn query<E: ImageEmbedder>(
    index: &EmbeddingIndex,
    image: &Path,
    embedder: &E,
    threshold: f64,
    k: usize,
) -> Result<DetectionVerdict> {
    let model = embedder.fingerprint();
    if model != index.model_fingerprint {
        return Err(Error::StaleIndex { index: index.model_fingerprint.clone(), model });
    }
    check_query_args(index, threshold, k)?;
    let v = embedder
        .embed_paths(&[image.to_path_buf()], index.probe)?
        .pop()
        .expect("one embedding per path");
    query_vector(index, &image.display().to_string(), &v, threshold, k)
}

/// Cosine similarity of two images, symmetric in its arguments.
pub fn pairwise_score<E: ImageEmbedder>(a: &Path, b: &Path, embedder: &E, probe: ProbePoint) -> Result<f64> {
    // Embed in a canonical order so swapping arguments is bit-identical.
    let (first, second) = if a <= b { (a, b) } else { (b, a) };
    let v = embedder.embed_paths(&[first.to_path_buf(), second.to_path_buf()], probe)?;
    Ok(v[0].cosine(&v[1]).clamp(-1.0, 1.0))
}
