//! Multi-positive supervised contrastive loss.
//!
//! For an anchor `i` with positives `P(i)`:
//!
//! ```text
//! L_i = -1/|P(i)| * sum_{p in P(i)} log( exp(z_i.z_p / t) / sum_{a != i} exp(z_i.z_a / t) )
//! ```
//!
//! The denominator runs over every other batch element, positives included.
//! Anchors with no positive are left out of the batch mean.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Allowed deviation of an input embedding's norm from 1.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub temperature: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { temperature: 0.07 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub per_anchor: BTreeMap<usize, f64>,
    pub anchors_counted: usize,
}

fn check_inputs(n: usize, mask: &[Vec<bool>], config: &LossConfig) -> Result<()> {
    if !(config.temperature > 0.0) {
        return Err(Error::Config(format!(
            "temperature must be positive, got {}",
            config.temperature
        )));
    }
    if mask.len() != n || mask.iter().any(|row| row.len() != n) {
        return Err(Error::Shape(format!(
            "positive mask must be {n}x{n} to match the embeddings"
        )));
    }
    if mask.iter().enumerate().any(|(i, row)| row[i]) {
        return Err(Error::Config("an element cannot be its own positive".into()));
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-anchor softmax over `a != i` of the scaled similarities, plus the loss.
/// Returns `(loss_i, probs)` where `probs[i] == 0`.
fn anchor_terms(sim: &[f64], i: usize, positives: &[usize]) -> (f64, Vec<f64>) {
    let max = sim
        .iter()
        .enumerate()
        .filter(|&(a, _)| a != i)
        .map(|(_, &s)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = sim
        .iter()
        .enumerate()
        .map(|(a, &s)| if a == i { 0.0 } else { (s - max).exp() })
        .collect();
    let sum: f64 = probs.iter().sum();
    let lse = max + sum.ln();
    for p in &mut probs {
        *p /= sum;
    }
    let mean_pos = positives.iter().map(|&p| sim[p]).sum::<f64>() / positives.len() as f64;
    (lse - mean_pos, probs)
}

struct Forward {
    report: LossReport,
    /// Row `i` holds `dL/ds_ia` for anchors that were counted.
    coeffs: Vec<Vec<f64>>,
}

fn forward(z: &[Vec<f64>], mask: &[Vec<bool>], config: &LossConfig) -> Result<Forward> {
    let n = z.len();
    let t = config.temperature;
    let mut per_anchor = BTreeMap::new();
    let mut coeffs = vec![vec![0.0; n]; n];
    for i in 0..n {
        let positives: Vec<usize> = (0..n).filter(|&j| mask[i][j]).collect();
        if positives.is_empty() {
            continue;
        }
        let sim: Vec<f64> = z.iter().map(|zj| dot(&z[i], zj) / t).collect();
        let (li, probs) = anchor_terms(&sim, i, &positives);
        per_anchor.insert(i, li);
        let w = 1.0 / positives.len() as f64;
        coeffs[i] = probs;
        for p in positives {
            coeffs[i][p] -= w;
        }
    }
    if per_anchor.is_empty() {
        return Err(Error::UndefinedLoss);
    }
    let anchors_counted = per_anchor.len();
    let total = per_anchor.values().sum::<f64>() / anchors_counted as f64;
    Ok(Forward {
        report: LossReport {
            total,
            per_anchor,
            anchors_counted,
        },
        coeffs,
    })
}

/// Loss over unit-norm embeddings with the given positive mask.
pub fn supcon_loss(
    embeddings: &[Vec<f64>],
    mask: &[Vec<bool>],
    config: &LossConfig,
) -> Result<LossReport> {
    check_inputs(embeddings.len(), mask, config)?;
    for (index, z) in embeddings.iter().enumerate() {
        let norm = dot(z, z).sqrt();
        if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(Error::NotNormalized { index, norm });
        }
    }
    Ok(forward(embeddings, mask, config)?.report)
}

/// Loss and its exact gradient with respect to the raw (pre-normalization)
/// inputs. Each input is L2-normalized first; the gradient includes the
/// Jacobian of that normalization.
pub fn supcon_gradient(
    inputs: &[Vec<f64>],
    mask: &[Vec<bool>],
    config: &LossConfig,
) -> Result<(LossReport, Vec<Vec<f64>>)> {
    let n = inputs.len();
    check_inputs(n, mask, config)?;
    let mut norms = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    for (index, u) in inputs.iter().enumerate() {
        let norm = dot(u, u).sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::NotNormalized { index, norm });
        }
        norms.push(norm);
        z.push(u.iter().map(|x| x / norm).collect::<Vec<_>>());
    }
    let fwd = forward(&z, mask, config)?;
    let scale = 1.0 / (fwd.report.anchors_counted as f64 * config.temperature);
    let dim = z.first().map_or(0, Vec::len);

    // dL/dz_k = scale * sum_a (C[k][a] + C[a][k]) z_a
    let mut grad = vec![vec![0.0; dim]; n];
    for (k, g) in grad.iter_mut().enumerate() {
        for (a, za) in z.iter().enumerate() {
            let c = fwd.coeffs[k][a] + fwd.coeffs[a][k];
            if c != 0.0 {
                for (gd, &zd) in g.iter_mut().zip(za) {
                    *gd += scale * c * zd;
                }
            }
        }
    }
    // Back through z = u / |u|.
    for ((g, zk), norm) in grad.iter_mut().zip(&z).zip(&norms) {
        let radial = dot(g, zk);
        for (gd, &zd) in g.iter_mut().zip(zk) {
            *gd = (*gd - radial * zd) / norm;
        }
    }
    Ok((fwd.report, grad))
}
