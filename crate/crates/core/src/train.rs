//! Contrastive training loop.
//!
//! SGD with momentum over forgery-aware batches. The learning rate ramps
//! linearly from zero during warm-up, then follows a half-cosine to zero;
//! it is updated once per epoch. After every epoch the validation loss is
//! measured on batches built from the validation groups, and training stops
//! once it has failed to improve for more than `patience` epochs. The best
//! weights are restored at the end.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::checkpoint::save_checkpoint;
use crate::data::DatasetSplit;
use crate::embed::{HeadVariant, Model, PreprocessedImage};
use crate::error::{Error, Result};
use crate::loss::{supcon_gradient, supcon_loss, LossConfig};
use crate::sampler::{make_batches, BatchConfig, ContrastiveBatch};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub base_lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub temperature: f64,
    pub seed: u64,
    pub head_variant: HeadVariant,
    pub weight_decay: f64,
    pub positives_per_anchor: usize,
    /// Defaults to `batch_size / 4`.
    pub anchors_per_batch: Option<usize>,
    /// Run every pass but never update parameters.
    pub freeze_parameters: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            warmup_epochs: 10,
            base_lr: 0.01,
            momentum: 0.9,
            batch_size: 128,
            patience: 10,
            temperature: 0.07,
            seed: 0,
            head_variant: HeadVariant::Mlp,
            weight_decay: 0.0,
            positives_per_anchor: 3,
            anchors_per_batch: None,
            freeze_parameters: false,
        }
    }
}

pub const ALLOWED_BATCH_SIZES: [usize; 3] = [32, 64, 128];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.epochs == 0 || self.warmup_epochs >= self.epochs {
            return fail(format!(
                "warmup_epochs ({}) must be below epochs ({})",
                self.warmup_epochs, self.epochs
            ));
        }
        if self.patience == 0 {
            return fail("patience must be at least 1".into());
        }
        if !(self.base_lr > 0.0) {
            return fail(format!("base_lr must be positive, got {}", self.base_lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.temperature > 0.0) {
            return fail(format!("temperature must be positive, got {}", self.temperature));
        }
        if !ALLOWED_BATCH_SIZES.contains(&self.batch_size) {
            return fail(format!(
                "batch_size must be one of {ALLOWED_BATCH_SIZES:?}, got {}",
                self.batch_size
            ));
        }
        Ok(())
    }

    pub fn batch_config(&self) -> BatchConfig {
        let mut cfg = BatchConfig::with_batch_size(self.batch_size);
        cfg.positives_per_anchor = self.positives_per_anchor;
        cfg.anchors_per_batch = self
            .anchors_per_batch
            .unwrap_or(self.batch_size / (1 + self.positives_per_anchor).max(4))
            .max(1);
        cfg
    }
}

/// Learning rate at (fractional) epoch `t`.
pub fn lr_schedule(t: f64, config: &TrainConfig) -> f64 {
    let warmup = config.warmup_epochs as f64;
    if t < warmup {
        return config.base_lr * t / warmup;
    }
    let span = (config.epochs - config.warmup_epochs) as f64;
    config.base_lr * 0.5 * (1.0 + (PI * (t - warmup) / span).cos())
}

/// Progress counters, updated after every epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub best_val_loss: f64,
    pub best_epoch: usize,
    pub epochs_since_best: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub best_val_loss: f64,
    pub epochs_since_best: usize,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Per-epoch JSON-lines log.
    pub log_path: Option<PathBuf>,
    /// Where to write the best checkpoint once training ends.
    pub checkpoint_path: Option<PathBuf>,
}

/// Preprocessed images, loaded once per run.
struct ImageCache {
    images: HashMap<PathBuf, PreprocessedImage>,
}

impl ImageCache {
    fn batch(&mut self, model: &Model, batch: &ContrastiveBatch) -> Result<Tensor> {
        for item in &batch.items {
            if !self.images.contains_key(&item.path) {
                let img = model.preprocessing().load(&item.path)?;
                self.images.insert(item.path.clone(), img);
            }
        }
        let refs: Vec<&PreprocessedImage> = batch.items.iter().map(|it| &self.images[&it.path]).collect();
        model.batch_tensor(&refs)
    }

}

fn rows_f64(t: &Tensor) -> Result<Vec<Vec<f64>>> {
    Ok(t.to_dtype(DType::F64)?.to_vec2::<f64>()?)
}

/// Mean loss over `batches` in inference mode; parameters are untouched.
pub fn evaluate_loss(model: &Model, batches: &[ContrastiveBatch], temperature: f64) -> Result<f64> {
    let mut cache = ImageCache {
        images: HashMap::new(),
    };
    batches_loss(model, batches, &LossConfig { temperature }, &mut cache)
}

fn batches_loss(
    model: &Model,
    batches: &[ContrastiveBatch],
    loss: &LossConfig,
    cache: &mut ImageCache,
) -> Result<f64> {
    let mut total = 0.0;
    for batch in batches {
        let x = cache.batch(model, batch)?;
        let (_, proj) = model.forward(&x, false)?;
        let z: Vec<Vec<f64>> = rows_f64(&proj)?
            .into_iter()
            .map(|row| {
                let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                row.into_iter().map(|v| v / n).collect()
            })
            .collect();
        total += supcon_loss(&z, &batch.positive_mask(), loss)?.total;
    }
    Ok(total / batches.len() as f64)
}

struct Sgd {
    params: Vec<(String, candle_core::Var)>,
    velocity: Vec<Option<Tensor>>,
    momentum: f64,
    weight_decay: f64,
}

impl Sgd {
    fn new(model: &Model, config: &TrainConfig) -> Self {
        let params = model.parameters();
        Sgd {
            velocity: vec![None; params.len()],
            params,
            momentum: config.momentum,
            weight_decay: config.weight_decay,
        }
    }

    fn step(&mut self, grads: &candle_core::backprop::GradStore, lr: f64) -> Result<()> {
        for ((_, var), velocity) in self.params.iter().zip(self.velocity.iter_mut()) {
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            // Detached so the momentum buffer does not keep every step's graph alive.
            let mut g = g.detach();
            if self.weight_decay > 0.0 {
                g = (g + (var.as_tensor() * self.weight_decay)?)?;
            }
            let v = match velocity.take() {
                Some(v) => ((v * self.momentum)? + g)?.detach(),
                None => g,
            };
            var.set(&(var.as_tensor() - (&v * lr)?)?)?;
            *velocity = Some(v);
        }
        Ok(())
    }
}

/// Trains `model` in place and leaves it holding the best weights seen.
pub fn train(
    split: &DatasetSplit,
    model: &Model,
    config: &TrainConfig,
    options: &TrainOptions,
) -> Result<TrainReport> {
    config.validate()?;
    if model.config().head.variant != config.head_variant {
        return Err(Error::Config(format!(
            "config asks for a {:?} head but the model has {:?}",
            config.head_variant,
            model.config().head.variant
        )));
    }
    if split.val_groups.is_empty() {
        return Err(Error::Config("validation partition is empty".into()));
    }
    let batch_cfg = config.batch_config();
    let val_batches = make_batches(&split.val_groups, &batch_cfg, config.seed, 0)?.batches;
    if val_batches.is_empty() {
        return Err(Error::Config("validation partition yields no usable batch".into()));
    }
    let loss_cfg = LossConfig {
        temperature: config.temperature,
    };
    let mut log_file = match &options.log_path {
        Some(p) => Some(File::create(p)?),
        None => None,
    };

    let mut cache = ImageCache {
        images: HashMap::new(),
    };
    let mut sgd = Sgd::new(model, config);
    let mut state = TrainState {
        epoch: 0,
        step: 0,
        lr: 0.0,
        best_val_loss: f64::INFINITY,
        best_epoch: 0,
        epochs_since_best: 0,
    };
    let mut best_weights = model.state();
    let mut log = Vec::new();
    let mut stopped_early = false;

    for epoch in 0..config.epochs {
        state.epoch = epoch;
        state.lr = lr_schedule(epoch as f64, config);
        let batches = make_batches(&split.train_groups, &batch_cfg, config.seed, epoch as u64)?;
        let mut train_total = 0.0;
        let mut steps = 0;
        for batch in &batches.batches {
            let x = cache.batch(model, batch)?;
            let (_, proj) = model.forward(&x, true)?;
            let diverged = || Error::Diverged {
                epoch,
                step: state.step,
                lr: state.lr,
                batch: batch.describe(),
            };
            let (report, grad) = match supcon_gradient(&rows_f64(&proj)?, &batch.positive_mask(), &loss_cfg) {
                Ok(out) => out,
                Err(Error::NotNormalized { .. }) => return Err(diverged()),
                Err(e) => return Err(e),
            };
            if !report.total.is_finite() || grad.iter().flatten().any(|g| !g.is_finite()) {
                return Err(diverged());
            }
            if !config.freeze_parameters {
                let flat: Vec<f32> = grad.into_iter().flatten().map(|g| g as f32).collect();
                let upstream = Tensor::from_vec(flat, proj.shape(), proj.device())?;
                // d/dparams of sum(proj * upstream) is the chain rule through
                // the network with the analytic loss gradient held fixed.
                let grads = (&proj * &upstream)?.sum_all()?.backward()?;
                sgd.step(&grads, state.lr)?;
                model.invalidate_fingerprint();
            }
            state.step += 1;
            steps += 1;
            train_total += report.total;
        }
        if steps == 0 {
            return Err(Error::Config("training partition yields no usable batch".into()));
        }
        let train_loss = train_total / steps as f64;
        let val_loss = batches_loss(model, &val_batches, &loss_cfg, &mut cache)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                step: state.step,
                lr: state.lr,
                batch: "validation".into(),
            });
        }
        if val_loss < state.best_val_loss {
            state.best_val_loss = val_loss;
            state.best_epoch = epoch;
            state.epochs_since_best = 0;
            best_weights = model.state();
        } else {
            state.epochs_since_best += 1;
        }
        let record = EpochRecord {
            epoch,
            lr: state.lr,
            train_loss,
            val_loss,
            best_val_loss: state.best_val_loss,
            epochs_since_best: state.epochs_since_best,
            steps,
        };
        log::info!(
            "epoch {epoch}: lr {:.5} train {train_loss:.4} val {val_loss:.4} (best {:.4} @ {})",
            state.lr,
            state.best_val_loss,
            state.best_epoch
        );
        if let Some(f) = log_file.as_mut() {
            writeln!(f, "{}", serde_json::to_string(&record)?)?;
        }
        log.push(record);
        if state.epochs_since_best > config.patience {
            stopped_early = true;
            break;
        }
    }

    model.restore(&best_weights)?;
    if let Some(path) = &options.checkpoint_path {
        save_checkpoint(model, path)?;
    }
    Ok(TrainReport {
        log,
        best_epoch: state.best_epoch,
        best_val_loss: state.best_val_loss,
        stopped_early,
    })
}

/// Reads a JSON training config; missing fields take their defaults.
pub fn load_train_config(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}
