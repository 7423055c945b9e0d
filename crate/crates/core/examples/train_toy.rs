//! Synthetic end-to-end run: generate a corpus, train the toy encoder,
//! calibrate on validation pairs and compare held-out metrics with the same
//! encoder before training. Takes about two minutes at the defaults.
//!
//! ```bash
//! cargo run -p forgecon --example train_toy -- [anchors] [epochs] [input_size]
//! ```

use std::time::Instant;

use forgecon::data::{group_by_anchor, load_manifest, partition_pairs, split_groups, DatasetSplit};
use forgecon::embed::{BackboneConfig, HeadVariant, Model, ModelConfig, ProbePoint, WeightsSource};
use forgecon::eval::{ablate_probe, calibrate_threshold, evaluate, format_ablation, format_table};
use forgecon::synth::{generate, SynthConfig};
use forgecon::train::{train, TrainConfig, TrainOptions};

fn main() -> forgecon::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let anchors: usize = args.next().map_or(200, |a| a.parse().expect("anchors"));
    let epochs: usize = args.next().map_or(20, |a| a.parse().expect("epochs"));
    let input_size: usize = args.next().map_or(32, |a| a.parse().expect("input size"));

    let dir = tempfile::tempdir()?;
    let synth = SynthConfig {
        n_anchors: anchors,
        per_anchor_limit: Some(3),
        n_dissimilar: 3 * anchors,
        seed: 7,
        ..SynthConfig::default()
    };
    let records = load_manifest(&generate(&synth, dir.path())?)?;
    let groups = group_by_anchor(&records)?;

    // 80% train; the rest is halved into validation and test.
    let outer = split_groups(&groups, 0.8, 1)?;
    let inner = split_groups(&outer.val_groups, 0.5, 2)?;
    let fit = DatasetSplit { val_groups: inner.train_groups.clone(), ..outer };
    let val_pairs = partition_pairs(&records, &fit).val;
    let test_pairs = partition_pairs(&records, &inner).val;
    println!(
        "{} train anchors, {} validation pairs, {} test pairs",
        fit.train_groups.len(),
        val_pairs.len(),
        test_pairs.len()
    );

    let config = TrainConfig {
        epochs,
        warmup_epochs: 2,
        batch_size: 32,
        patience: 5,
        base_lr: 0.1,
        weight_decay: 5e-3,
        ..TrainConfig::default()
    };
    // 256-d features pooled on a 4x4 grid keep coarse layout in the embedding.
    let mut model_config = ModelConfig::toy(256, input_size, HeadVariant::Mlp);
    if let BackboneConfig::ToyCnn { grid, .. } = &mut model_config.backbone {
        *grid = 4;
    }
    let model = Model::new(model_config, &WeightsSource::Random { seed: 3 })?;

    let probe = ProbePoint::EncoderOutput;
    let threshold = calibrate_threshold(&val_pairs, &model, probe)?;
    println!("before training\n{}", format_table(&evaluate(&test_pairs, &model, probe, threshold)?));

    let start = Instant::now();
    let report = train(&fit, &model, &config, &TrainOptions::default())?;
    println!(
        "trained {} epochs in {:.1?}, best epoch {}",
        report.log.len(),
        start.elapsed(),
        report.best_epoch
    );

    let ablation = ablate_probe(&val_pairs, &test_pairs, &model)?;
    for run in &ablation.runs {
        println!("{}", format_table(&run.report));
    }
    println!("{}", format_ablation(&ablation));
    Ok(())
}
