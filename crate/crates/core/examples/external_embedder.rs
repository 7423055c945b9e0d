//! Plugs a hand-written embedding into the evaluation pipeline through
//! `EmbeddingProvider`, the same hook a frozen foundation model would use.
//!
//! The provider pools the Sobel edge map into an 8x8 grid. It ignores colour,
//! so palette swaps (style transfer) score as high as the other attacks.

use std::path::PathBuf;

use forgecon::criterion::{load_raster, represent, RepresentationDomain};
use forgecon::data::{group_by_anchor, load_manifest, partition_pairs, split_groups};
use forgecon::embed::{EmbeddingProvider, ExternalEncoder, ProbePoint};
use forgecon::eval::{calibrate_threshold, evaluate, format_table};
use forgecon::synth::{generate, SynthConfig};

const CELLS: u32 = 8;

struct PooledEdges;

impl EmbeddingProvider for PooledEdges {
    fn name(&self) -> String {
        format!("pooled-edges-{CELLS}x{CELLS}")
    }

    fn embed(&self, paths: &[PathBuf]) -> forgecon::Result<Vec<(PathBuf, Vec<f32>, usize)>> {
        paths
            .iter()
            .map(|p| {
                let map = represent(&load_raster(p)?, RepresentationDomain::Edge);
                let (cw, ch) = (map.width / CELLS, map.height / CELLS);
                let mut v = vec![0f32; (CELLS * CELLS) as usize];
                for y in 0..CELLS * ch {
                    for x in 0..CELLS * cw {
                        v[((y / ch) * CELLS + x / cw) as usize] += map.at(0, x, y);
                    }
                }
                // Centre so unrelated images are not all near cosine 1.
                let mean = v.iter().sum::<f32>() / v.len() as f32;
                v.iter_mut().for_each(|x| *x -= mean);
                let dim = v.len();
                Ok((p.clone(), v, dim))
            })
            .collect()
    }
}

fn main() -> forgecon::Result<()> {
    let dir = tempfile::tempdir()?;
    let config = SynthConfig { n_anchors: 60, per_anchor_limit: Some(3), n_dissimilar: 180, seed: 9, ..SynthConfig::default() };
    let records = load_manifest(&generate(&config, dir.path())?)?;
    // Nothing is trained, so the "train" half only serves as calibration data.
    let split = split_groups(&group_by_anchor(&records)?, 0.5, 0)?;
    let parts = partition_pairs(&records, &split);

    let encoder = ExternalEncoder::new(Box::new(PooledEdges), (CELLS * CELLS) as usize);
    let probe = ProbePoint::EncoderOutput;
    let threshold = calibrate_threshold(&parts.train, &encoder, probe)?;
    println!("{}", format_table(&evaluate(&parts.val, &encoder, probe, threshold)?));
    Ok(())
}
