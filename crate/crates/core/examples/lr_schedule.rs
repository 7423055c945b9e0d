//! Prints the warm-up plus cosine learning-rate curve for the default
//! training configuration, one row every five epochs.

use forgecon::train::{lr_schedule, TrainConfig};

fn main() {
    let config = TrainConfig::default();
    println!("base lr {}, warm-up {} of {} epochs", config.base_lr, config.warmup_epochs, config.epochs);
    for epoch in (0..=config.epochs).step_by(5) {
        let lr = lr_schedule(epoch as f64, &config);
        let bar = "#".repeat((lr / config.base_lr * 40.0).round() as usize);
        println!("{epoch:>3}  {lr:.5}  {bar}");
    }
}
