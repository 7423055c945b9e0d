//! Packs anchor groups into contrastive batches and scores one batch with
//! the SupCon loss on random unit vectors. No images are touched.

use forgecon::data::{AnchorGroup, AttackType};
use forgecon::loss::{supcon_gradient, supcon_loss, LossConfig};
use forgecon::sampler::{make_batches, BatchConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn groups(n: usize) -> Vec<AnchorGroup> {
    (0..n)
        .map(|i| AnchorGroup {
            anchor_id: format!("a{i:03}"),
            original_path: format!("originals/a{i:03}.png").into(),
            forgery_paths: AttackType::FORGERIES
                .iter()
                .map(|&a| (format!("forgeries/a{i:03}_{}.png", a.as_str()).into(), a))
                .collect(),
        })
        .collect()
}

fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn main() -> forgecon::Result<()> {
    let config = BatchConfig::with_batch_size(32);
    for epoch in 0..2 {
        let epoch_batches = make_batches(&groups(20), &config, 5, epoch)?;
        println!("epoch {epoch}: {} batches", epoch_batches.batches.len());
        let first = &epoch_batches.batches[0];
        println!("  {}", first.describe());
        println!("  element 0 has positives {:?}", first.positives(0));
    }

    let batch = &make_batches(&groups(8), &config, 5, 0)?.batches[0];
    let mask = batch.positive_mask();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let z: Vec<Vec<f64>> = (0..batch.len()).map(|_| unit(&mut rng, 16)).collect();
    for tau in [0.07, 0.5, 1.0] {
        let cfg = LossConfig { temperature: tau };
        let report = supcon_loss(&z, &mask, &cfg)?;
        let (_, grad) = supcon_gradient(&z, &mask, &cfg)?;
        let gnorm = grad.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
        println!("tau {tau:<5} loss {:.4} over {} anchors, |grad| {gnorm:.4}", report.total, report.anchors_counted);
    }
    Ok(())
}
