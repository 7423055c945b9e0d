//! Writes a small synthetic corpus and summarizes what ended up in it.
//!
//! ```bash
//! cargo run -p forgecon --example synth_corpus -- /tmp/corpus 25
//! ```

use std::path::PathBuf;

use forgecon::data::{attack_histogram, group_by_anchor, load_manifest, Label};
use forgecon::synth::{generate, SynthConfig};

fn main() -> forgecon::Result<()> {
    let mut args = std::env::args().skip(1);
    let out: PathBuf = args.next().unwrap_or_else(|| "corpus".into()).into();
    let anchors: usize = args.next().map_or(25, |a| a.parse().expect("anchor count"));

    let config = SynthConfig {
        n_anchors: anchors,
        per_anchor_limit: Some(3),
        n_dissimilar: anchors,
        seed: 11,
        ..SynthConfig::default()
    };
    let manifest = generate(&config, &out)?;
    let records = load_manifest(&manifest)?;
    let groups = group_by_anchor(&records)?;

    let dissimilar = records.iter().filter(|r| r.label == Label::Dissimilar).count();
    println!("{}: {} records, {} dissimilar", manifest.display(), records.len(), dissimilar);
    for (attack, n) in attack_histogram(&records) {
        println!("  {:<15} {n}", attack.as_str());
    }
    let first = &groups[0];
    println!(
        "group {} has {} forgeries: {:?}",
        first.anchor_id,
        first.forgery_paths.len(),
        first.forgery_paths.iter().map(|(_, a)| a.as_str()).collect::<Vec<_>>()
    );
    Ok(())
}
