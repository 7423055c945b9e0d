//! Indexes the originals of a synthetic corpus, round-trips the index
//! through disk and queries it with every forgery and distractor.
//!
//! Pass a checkpoint written by `forgecon train` to use trained weights;
//! without one a randomly initialised toy encoder is used, which is enough
//! to see retrieval work on the easier attacks.

use std::collections::BTreeMap;

use forgecon::checkpoint::load_checkpoint;
use forgecon::data::{group_by_anchor, load_manifest, Label};
use forgecon::detector::{build_index, query, EmbeddingIndex};
use forgecon::embed::{HeadVariant, Model, ModelConfig, ProbePoint, WeightsSource};
use forgecon::synth::{generate, SynthConfig};

fn main() -> forgecon::Result<()> {
    let model = match std::env::args().nth(1) {
        Some(path) => load_checkpoint(path.as_ref())?,
        None => Model::new(ModelConfig::toy(64, 64, HeadVariant::Mlp), &WeightsSource::Random { seed: 1 })?,
    };

    let dir = tempfile::tempdir()?;
    let config = SynthConfig { n_anchors: 30, n_dissimilar: 30, seed: 4, ..SynthConfig::default() };
    let records = load_manifest(&generate(&config, dir.path())?)?;
    let originals: Vec<(String, _)> = group_by_anchor(&records)?
        .into_iter()
        .map(|g| (g.anchor_id, g.original_path))
        .collect();

    let path = dir.path().join("originals.idx");
    build_index(&originals, &model, ProbePoint::EncoderOutput)?.save(&path)?;
    let index = EmbeddingIndex::load(&path)?;
    println!("{} originals, {}-d, probe {}", index.len(), index.dim(), index.probe());

    // Top-1 hit rate per attack; distractors report their best (wrong) score.
    let mut hits: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    let mut distractor_scores = Vec::new();
    for r in &records {
        let verdict = query(&index, &r.candidate_path, &model, 0.9, 3)?;
        match r.label {
            Label::Similar => {
                let e = hits.entry(r.attack.as_str()).or_default();
                e.0 += (verdict.best_match == r.anchor_id) as usize;
                e.1 += 1;
            }
            Label::Dissimilar => distractor_scores.push(verdict.best_score),
        }
    }
    for (attack, (hit, total)) in hits {
        println!("{attack:<15} top-1 {hit}/{total}");
    }
    let max = distractor_scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    println!("highest distractor score {max:.4}");
    Ok(())
}
