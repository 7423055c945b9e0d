//! Threshold calibration, precision/recall/F1 reporting and the probe-point
//! ablation.
//!
//! Similar pairs are the positive class and a pair is predicted similar when
//! its cosine score is `>=` the threshold. Per-attack rows take that attack's
//! similar pairs as positives and every dissimilar pair as negatives, so the
//! false-positive and true-negative counts are shared across rows.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::{AttackType, PairRecord};
use crate::embed::{EmbeddingVector, ImageEmbedder, ProbePoint};
use crate::error::{Error, Result};

pub const NEGATIVES_CONVENTION: &str =
    "per-attack rows: positives = that attack's similar pairs; negatives = all dissimilar pairs";

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn record(&mut self, predicted_similar: bool, similar: bool) {
        match (predicted_similar, similar) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn metrics(&self) -> Metrics {
        let (precision, recall) = (self.precision(), self.recall());
        Metrics {
            precision,
            recall,
            f1: f1_score(precision, recall),
            counts: *self,
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: ConfusionCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: ConfusionCounts,
    pub per_attack: BTreeMap<AttackType, Metrics>,
    pub threshold: f64,
    pub probe: ProbePoint,
    pub convention: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub pair_id: String,
    pub attack: AttackType,
    pub similar: bool,
    pub score: f64,
}

/// Cosine score of every pair. Each distinct image is embedded once.
pub fn score_pairs<E: ImageEmbedder>(pairs: &[PairRecord], embedder: &E, probe: ProbePoint) -> Result<Vec<ScoredPair>> {
    let mut unique: Vec<PathBuf> = Vec::new();
    let mut slot: HashMap<&PathBuf, usize> = HashMap::new();
    for p in pairs {
        for path in [&p.original_path, &p.candidate_path] {
            slot.entry(path).or_insert_with(|| {
                unique.push(path.clone());
                unique.len() - 1
            });
        }
    }
    let vectors: Vec<EmbeddingVector> = embedder.embed_paths(&unique, probe)?;
    Ok(pairs
        .iter()
        .map(|p| {
            let a = &vectors[slot[&p.original_path]];
            let b = &vectors[slot[&p.candidate_path]];
            ScoredPair {
                pair_id: p.pair_id.clone(),
                attack: p.attack,
                similar: p.is_similar(),
                score: a.cosine(b).clamp(-1.0, 1.0),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub threshold: f64,
    pub f1: f64,
}

/// Candidate thresholds: the smallest score (everything positive), the
/// midpoints between consecutive distinct scores, and the float just above
/// the largest score (everything negative). Ascending.
pub fn candidate_thresholds(scores: &[f64]) -> Vec<f64> {
    let mut s: Vec<f64> = scores.to_vec();
    s.sort_by(f64::total_cmp);
    s.dedup();
    let mut out = Vec::with_capacity(s.len() + 1);
    if let (Some(&lo), Some(&hi)) = (s.first(), s.last()) {
        out.push(lo);
        out.extend(s.windows(2).map(|w| (w[0] + w[1]) / 2.0));
        out.push(hi.next_up());
    }
    out
}

/// Threshold maximizing F1; the smallest one on ties.
pub fn calibrate_scores(scored: &[(f64, bool)]) -> Result<Calibration> {
    let positives = scored.iter().filter(|(_, y)| *y).count();
    if positives == 0 || positives == scored.len() {
        return Err(Error::Calibration(format!(
            "validation needs both labels, got {positives} similar of {} pairs",
            scored.len()
        )));
    }
    let mut sorted: Vec<(f64, bool)> = scored.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let candidates = candidate_thresholds(&sorted.iter().map(|p| p.0).collect::<Vec<_>>());

    // Sweep ascending: pairs below the threshold turn into predicted negatives.
    let mut below = 0usize;
    let mut fn_ = 0usize;
    let mut best: Option<Calibration> = None;
    for t in candidates {
        while below < sorted.len() && sorted[below].0 < t {
            fn_ += sorted[below].1 as usize;
            below += 1;
        }
        let tp = positives - fn_;
        let fp = (sorted.len() - below) - tp;
        let counts = ConfusionCounts { tp, fp, tn: below - fn_, fn_ };
        let f1 = counts.metrics().f1;
        if best.is_none_or(|b| f1 > b.f1) {
            best = Some(Calibration { threshold: t, f1 });
        }
    }
    Ok(best.expect("at least two candidates"))
}

pub fn calibrate_threshold<E: ImageEmbedder>(val_pairs: &[PairRecord], embedder: &E, probe: ProbePoint) -> Result<f64> {
    let scored = score_pairs(val_pairs, embedder, probe)?;
    let flat: Vec<(f64, bool)> = scored.iter().map(|s| (s.score, s.similar)).collect();
    Ok(calibrate_scores(&flat)?.threshold)
}

pub fn metrics_from_scores(scored: &[ScoredPair], threshold: f64, probe: ProbePoint) -> Result<MetricsReport> {
    if scored.is_empty() {
        return Err(Error::InsufficientData("test set is empty".into()));
    }
    let mut overall = ConfusionCounts::default();
    let mut negatives = ConfusionCounts::default();
    let mut per_attack: BTreeMap<AttackType, ConfusionCounts> = BTreeMap::new();
    for s in scored {
        let predicted = s.score >= threshold;
        overall.record(predicted, s.similar);
        if s.similar {
            per_attack.entry(s.attack).or_default().record(predicted, true);
        } else {
            negatives.record(predicted, false);
        }
    }
    let per_attack = per_attack
        .into_iter()
        .map(|(a, mut c)| {
            c.fp = negatives.fp;
            c.tn = negatives.tn;
            (a, c.metrics())
        })
        .collect();
    let m = overall.metrics();
    Ok(MetricsReport {
        precision: m.precision,
        recall: m.recall,
        f1: m.f1,
        counts: overall,
        per_attack,
        threshold,
        probe,
        convention: NEGATIVES_CONVENTION.to_string(),
    })
}

pub fn evaluate<E: ImageEmbedder>(
    test_pairs: &[PairRecord],
    embedder: &E,
    probe: ProbePoint,
    threshold: f64,
) -> Result<MetricsReport> {
    if test_pairs.is_empty() {
        return Err(Error::InsufficientData("test set is empty".into()));
    }
    metrics_from_scores(&score_pairs(test_pairs, embedder, probe)?, threshold, probe)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRun {
    pub probe: ProbePoint,
    pub dim: usize,
    pub threshold: f64,
    pub report: MetricsReport,
}

/// Encoder-probe value minus projection-probe value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricDelta {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub runs: Vec<ProbeRun>,
    pub delta_encoder_minus_projection: MetricDelta,
    pub per_attack_delta_f1: BTreeMap<AttackType, f64>,
}

/// Calibrates on `val_pairs` and evaluates on `test_pairs` once per probe.
pub fn ablate_probe<E: ImageEmbedder>(
    val_pairs: &[PairRecord],
    test_pairs: &[PairRecord],
    embedder: &E,
) -> Result<AblationReport> {
    let mut runs = Vec::with_capacity(2);
    for probe in ProbePoint::BOTH {
        let dim = embedder
            .probe_dim(probe)
            .ok_or_else(|| Error::Config(format!("encoder does not expose the {probe} probe")))?;
        let threshold = calibrate_threshold(val_pairs, embedder, probe)?;
        let report = evaluate(test_pairs, embedder, probe, threshold)?;
        log::info!("probe {probe}: dim {dim}, threshold {threshold:.4}, F1 {:.4}", report.f1);
        runs.push(ProbeRun { probe, dim, threshold, report });
    }
    let (enc, proj) = (&runs[0].report, &runs[1].report);
    let delta = MetricDelta {
        precision: enc.precision - proj.precision,
        recall: enc.recall - proj.recall,
        f1: enc.f1 - proj.f1,
    };
    let per_attack_delta_f1 = enc
        .per_attack
        .iter()
        .filter_map(|(a, m)| proj.per_attack.get(a).map(|p| (*a, m.f1 - p.f1)))
        .collect();
    Ok(AblationReport {
        runs,
        delta_encoder_minus_projection: delta,
        per_attack_delta_f1,
    })
}

/// Aligned text table: an overall row followed by one row per attack.
pub fn format_table(report: &MetricsReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# probe {}, threshold {:.4}", report.probe, report.threshold);
    let _ = writeln!(out, "# {}", report.convention);
    let _ = writeln!(out, "{:<16} {:>9} {:>9} {:>9}", "Attack", "Precision", "Recall", "F1");
    let _ = writeln!(out, "{:<16} {:>9.4} {:>9.4} {:>9.4}", "overall", report.precision, report.recall, report.f1);
    for (attack, m) in &report.per_attack {
        let _ = writeln!(out, "{:<16} {:>9.4} {:>9.4} {:>9.4}", attack.as_str(), m.precision, m.recall, m.f1);
    }
    out
}

pub fn format_ablation(report: &AblationReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<18} {:>5} {:>9} {:>9} {:>9} {:>9}", "Probe", "Dim", "Threshold", "Precision", "Recall", "F1");
    for run in &report.runs {
        let r = &run.report;
        let _ = writeln!(
            out,
            "{:<18} {:>5} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
            run.probe.as_str(),
            run.dim,
            run.threshold,
            r.precision,
            r.recall,
            r.f1
        );
    }
    let d = report.delta_encoder_minus_projection;
    let _ = writeln!(
        out,
        "{:<18} {:>5} {:>9} {:>+9.4} {:>+9.4} {:>+9.4}",
        "encoder-projection", "", "", d.precision, d.recall, d.f1
    );
    out
}
