//! Image encoders, projection heads and probe-point selection.
//!
//! Every encoder implements [`ImageEmbedder`]: given image paths it returns
//! L2-normalized vectors taken at a chosen [`ProbePoint`]. Trainable encoders
//! ([`Model`]) are a convolutional backbone followed by a projection head;
//! [`ExternalEncoder`] wraps any third-party embedding source.

mod external;
mod model;
mod preprocess;

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use external::{EmbeddingFileProvider, EmbeddingProvider, ExternalEncoder};
pub use model::{
    make_encoder, BackboneConfig, EncoderHandle, EncoderKind, EncoderSpec, HeadConfig, HeadVariant,
    Model, ModelConfig, WeightsSource, PROJECTION_DIM, REFERENCE_FEATURE_DIM,
};
pub use preprocess::{decode, Preprocessing, PreprocessedImage, IMAGENET_MEAN, IMAGENET_STD};

/// Which layer's output serves as the embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbePoint {
    EncoderOutput,
    ProjectionOutput,
}

impl ProbePoint {
    pub const BOTH: [ProbePoint; 2] = [ProbePoint::EncoderOutput, ProbePoint::ProjectionOutput];

    pub fn as_str(self) -> &'static str {
        match self {
            ProbePoint::EncoderOutput => "encoder_output",
            ProbePoint::ProjectionOutput => "projection_output",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            ProbePoint::EncoderOutput => 0,
            ProbePoint::ProjectionOutput => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ProbePoint::EncoderOutput),
            1 => Some(ProbePoint::ProjectionOutput),
            _ => None,
        }
    }
}

impl fmt::Display for ProbePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ProbePoint {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "encoder_output" | "encoder" => Ok(ProbePoint::EncoderOutput),
            "projection_output" | "projection" => Ok(ProbePoint::ProjectionOutput),
            other => Err(format!("unknown probe point `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f32>,
    pub probe: ProbePoint,
    pub normalized: bool,
}

impl EmbeddingVector {
    /// Scales `values` to unit L2 norm. Fails on zero or non-finite input.
    pub fn normalize(values: Vec<f32>, probe: ProbePoint) -> Result<Self> {
        let norm = values.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::NonFinite {
                layer: format!("{probe} normalization (norm {norm})"),
            });
        }
        let values = values.iter().map(|&v| (v as f64 / norm) as f32).collect();
        Ok(EmbeddingVector {
            values,
            probe,
            normalized: true,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt()
    }

    /// Dot product accumulated in f64; the cosine when both are normalized.
    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        cosine(&self.values, &other.values)
    }
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Anything that turns image files into normalized embeddings.
pub trait ImageEmbedder {
    /// Identifies the exact weights; indices record it to detect staleness.
    fn fingerprint(&self) -> String;

    /// Embedding dimension at `probe`, or `None` if the probe is unavailable.
    fn probe_dim(&self, probe: ProbePoint) -> Option<usize>;

    fn embed_paths(&self, paths: &[PathBuf], probe: ProbePoint) -> Result<Vec<EmbeddingVector>>;
}

impl<T: ImageEmbedder + ?Sized> ImageEmbedder for &T {
    fn fingerprint(&self) -> String {
        (**self).fingerprint()
    }

    fn probe_dim(&self, probe: ProbePoint) -> Option<usize> {
        (**self).probe_dim(probe)
    }

    fn embed_paths(&self, paths: &[PathBuf], probe: ProbePoint) -> Result<Vec<EmbeddingVector>> {
        (**self).embed_paths(paths, probe)
    }
}
