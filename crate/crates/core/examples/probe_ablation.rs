//! Encoder-output versus projection-output comparison for a checkpoint on a
//! manifest's pairs, split by anchor into calibration and test halves.
//!
//! ```bash
//! cargo run -p forgecon --example probe_ablation -- model.ckpt corpus/manifest.jsonl
//! ```

use forgecon::checkpoint::load_checkpoint;
use forgecon::data::{group_by_anchor, load_manifest, partition_pairs, split_groups};
use forgecon::eval::{ablate_probe, format_ablation};

fn main() -> forgecon::Result<()> {
    let mut args = std::env::args().skip(1);
    let (Some(model), Some(manifest)) = (args.next(), args.next()) else {
        eprintln!("usage: probe_ablation <checkpoint> <manifest>");
        std::process::exit(1);
    };
    let model = load_checkpoint(model.as_ref())?;
    let records = load_manifest(manifest.as_ref())?;
    let split = split_groups(&group_by_anchor(&records)?, 0.5, 0)?;
    let parts = partition_pairs(&records, &split);

    let report = ablate_probe(&parts.train, &parts.val, &model)?;
    println!("{}", format_ablation(&report));
    println!("{}", serde_json::to_string_pretty(&report.delta_encoder_minus_projection)?);
    Ok(())
}
