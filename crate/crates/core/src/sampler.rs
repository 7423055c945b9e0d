//! Forgery-aware batch construction.
//!
//! Each anchor group contributes its original plus a rotating subset of its
//! forgeries. Within a batch, an element's positives are the other members
//! of its group; everything else is a negative.

use std::fmt::Write as _;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{AnchorGroup, AttackType};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchConfig {
    pub batch_size: usize,
    pub anchors_per_batch: usize,
    pub positives_per_anchor: usize,
}

impl BatchConfig {
    /// Three forgeries per original, `batch_size / 4` anchors per batch.
    pub fn with_batch_size(batch_size: usize) -> Self {
        BatchConfig {
            batch_size,
            anchors_per_batch: (batch_size / 4).max(1),
            positives_per_anchor: 3,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.positives_per_anchor == 0 || self.anchors_per_batch == 0 {
            return Err(Error::Config(
                "anchors_per_batch and positives_per_anchor must be at least 1".into(),
            ));
        }
        let needed = self.anchors_per_batch * (1 + self.positives_per_anchor);
        if self.batch_size < 2 || needed > self.batch_size {
            return Err(Error::Config(format!(
                "batch_size {} cannot hold {} anchors with {} positives each ({} elements)",
                self.batch_size, self.anchors_per_batch, self.positives_per_anchor, needed
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchItem {
    pub path: PathBuf,
    pub anchor_id: String,
    /// `None` for the original artwork.
    pub attack: Option<AttackType>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContrastiveBatch {
    pub items: Vec<BatchItem>,
    positives: Vec<Vec<usize>>,
}

impl ContrastiveBatch {
    /// Builds the positive index from shared anchor ids.
    pub fn new(items: Vec<BatchItem>) -> Self {
        let positives = (0..items.len())
            .map(|i| {
                (0..items.len())
                    .filter(|&j| j != i && items[j].anchor_id == items[i].anchor_id)
                    .collect()
            })
            .collect();
        ContrastiveBatch { items, positives }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn positives(&self, i: usize) -> &[usize] {
        &self.positives[i]
    }

    pub fn negatives(&self, i: usize) -> Vec<usize> {
        let pos = &self.positives[i];
        (0..self.len())
            .filter(|&j| j != i && !pos.contains(&j))
            .collect()
    }

    /// `mask[i][j]` is true iff `j` is a positive of `i`.
    pub fn positive_mask(&self) -> Vec<Vec<bool>> {
        positive_mask(self)
    }

    /// One-line audit record: `anchor:original|attack,...`.
    pub fn describe(&self) -> String {
        let mut s = String::new();
        for (i, item) in self.items.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            let kind = item.attack.map_or("original", AttackType::as_str);
            let _ = write!(s, "{}:{}", item.anchor_id, kind);
        }
        s
    }
}

pub fn positive_mask(batch: &ContrastiveBatch) -> Vec<Vec<bool>> {
    let n = batch.len();
    let mut mask = vec![vec![false; n]; n];
    for (i, row) in mask.iter_mut().enumerate() {
        for &j in batch.positives(i) {
            row[j] = true;
        }
    }
    mask
}

/// Batches for one epoch plus bookkeeping about what was left out.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpochBatches {
    pub batches: Vec<ContrastiveBatch>,
    /// Groups skipped because they have no forgeries.
    pub skipped_groups: usize,
    /// Batches dropped because some element had no in-batch positive.
    pub dropped_batches: usize,
}

impl IntoIterator for EpochBatches {
    type Item = ContrastiveBatch;
    type IntoIter = std::vec::IntoIter<ContrastiveBatch>;

    fn into_iter(self) -> Self::IntoIter {
        self.batches.into_iter()
    }
}

fn epoch_rng(seed: u64, epoch: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch.wrapping_add(1));
    rng
}

/// Builds one epoch of contrastive batches from the training groups.
///
/// Groups are shuffled per `(seed, epoch)` and packed `anchors_per_batch` at
/// a time. A group with more forgeries than `positives_per_anchor` contributes
/// a window of its (seed-permuted) forgeries that advances each epoch, so all
/// forgeries are visited over successive epochs.
pub fn make_batches(
    groups: &[AnchorGroup],
    config: &BatchConfig,
    seed: u64,
    epoch: u64,
) -> Result<EpochBatches> {
    config.validate()?;
    let eligible: Vec<&AnchorGroup> = groups
        .iter()
        .filter(|g| !g.forgery_paths.is_empty())
        .collect();
    let skipped_groups = groups.len() - eligible.len();
    if skipped_groups > 0 {
        log::warn!("skipping {skipped_groups} anchor groups without forgeries");
    }
    if eligible.is_empty() {
        return Err(Error::InsufficientData(
            "no anchor group has a forgery to use as a positive".into(),
        ));
    }

    let mut rng = epoch_rng(seed, epoch);
    let mut order: Vec<usize> = (0..eligible.len()).collect();
    order.shuffle(&mut rng);

    let ppa = config.positives_per_anchor;
    let mut batches = Vec::new();
    let mut dropped_batches = 0;
    for chunk in order.chunks(config.anchors_per_batch) {
        let mut items = Vec::with_capacity(config.batch_size);
        for &gi in chunk {
            let group = eligible[gi];
            items.push(BatchItem {
                path: group.original_path.clone(),
                anchor_id: group.anchor_id.clone(),
                attack: None,
            });
            for (path, attack) in forgery_window(group, ppa, seed, epoch) {
                items.push(BatchItem {
                    path: path.clone(),
                    anchor_id: group.anchor_id.clone(),
                    attack: Some(*attack),
                });
            }
        }
        items.shuffle(&mut rng);
        let batch = ContrastiveBatch::new(items);
        if (0..batch.len()).any(|i| batch.positives(i).is_empty()) {
            dropped_batches += 1;
            continue;
        }
        batches.push(batch);
    }
    Ok(EpochBatches {
        batches,
        skipped_groups,
        dropped_batches,
    })
}

fn forgery_window(
    group: &AnchorGroup,
    ppa: usize,
    seed: u64,
    epoch: u64,
) -> Vec<&(PathBuf, AttackType)> {
    let n = group.forgery_paths.len();
    if n <= ppa {
        return group.forgery_paths.iter().collect();
    }
    // Permutation depends on the seed and the group only, so the window
    // rotation covers every forgery.
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(group.anchor_id.as_bytes()));
    perm.shuffle(&mut rng);
    let start = (epoch as usize % n) * ppa;
    (0..ppa)
        .map(|k| &group.forgery_paths[perm[(start + k) % n]])
        .collect()
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}
