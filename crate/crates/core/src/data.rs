//! Dataset schema: labelled image pairs, anchor groups and leak-free splits.
//!
//! A manifest is UTF-8 JSON lines, one [`PairRecord`] per line:
//!
//! ```text
//! {"pair_id":"p1","original_path":"originals/a1.png","candidate_path":"forgeries/a1_0.png","label":"similar","attack":"inpainting","anchor_id":"a1"}
//! ```
//!
//! Relative paths are resolved against the manifest's directory.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Generative manipulation that produced a forgery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackType {
    Inpainting,
    StyleTransfer,
    Adversarial,
    Cutmix,
    None,
}

impl AttackType {
    /// The four manipulation kinds a similar pair may carry.
    pub const FORGERIES: [AttackType; 4] = [
        AttackType::Inpainting,
        AttackType::StyleTransfer,
        AttackType::Adversarial,
        AttackType::Cutmix,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AttackType::Inpainting => "inpainting",
            AttackType::StyleTransfer => "style_transfer",
            AttackType::Adversarial => "adversarial",
            AttackType::Cutmix => "cutmix",
            AttackType::None => "none",
        }
    }
}

impl fmt::Display for AttackType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AttackType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "inpainting" => Ok(AttackType::Inpainting),
            "style_transfer" => Ok(AttackType::StyleTransfer),
            "adversarial" => Ok(AttackType::Adversarial),
            "cutmix" => Ok(AttackType::Cutmix),
            "none" => Ok(AttackType::None),
            other => Err(format!("unknown attack type `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Similar,
    Dissimilar,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRecord {
    pub pair_id: String,
    pub original_path: PathBuf,
    pub candidate_path: PathBuf,
    pub label: Label,
    pub attack: AttackType,
    pub anchor_id: String,
}

impl PairRecord {
    pub fn is_similar(&self) -> bool {
        self.label == Label::Similar
    }

    /// Checks the label/attack pairing rule.
    pub fn validate(&self) -> Result<()> {
        match (self.label, self.attack) {
            (Label::Similar, AttackType::None) => Err(Error::Validation {
                pair_id: self.pair_id.clone(),
                msg: "similar pair must carry an attack type".into(),
            }),
            (Label::Dissimilar, attack) if attack != AttackType::None => Err(Error::Validation {
                pair_id: self.pair_id.clone(),
                msg: format!("dissimilar pair carries attack `{attack}`"),
            }),
            _ => Ok(()),
        }
    }
}

/// An original artwork plus every forgery derived from it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorGroup {
    pub anchor_id: String,
    pub original_path: PathBuf,
    pub forgery_paths: Vec<(PathBuf, AttackType)>,
}

impl AnchorGroup {
    pub fn paths(&self) -> impl Iterator<Item = &Path> {
        std::iter::once(self.original_path.as_path())
            .chain(self.forgery_paths.iter().map(|(p, _)| p.as_path()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train_groups: Vec<AnchorGroup>,
    pub val_groups: Vec<AnchorGroup>,
    pub seed: u64,
    pub ratio: f64,
}

impl DatasetSplit {
    pub fn train_anchor_ids(&self) -> HashSet<&str> {
        self.train_groups.iter().map(|g| g.anchor_id.as_str()).collect()
    }

    pub fn val_anchor_ids(&self) -> HashSet<&str> {
        self.val_groups.iter().map(|g| g.anchor_id.as_str()).collect()
    }

    /// Image paths present in both partitions. Empty for every split this
    /// module produces.
    pub fn leaked_paths(&self) -> Vec<PathBuf> {
        let train: HashSet<&Path> = self.train_groups.iter().flat_map(|g| g.paths()).collect();
        let mut leaked: Vec<PathBuf> = self
            .val_groups
            .iter()
            .flat_map(|g| g.paths())
            .filter(|p| train.contains(p))
            .map(Path::to_path_buf)
            .collect();
        leaked.sort();
        leaked.dedup();
        leaked
    }

    /// Writes the split as JSON lines: a header with seed and ratio, then one
    /// line per group tagged with its partition.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = fs::File::create(path)?;
        let header = serde_json::json!({ "seed": self.seed, "ratio": self.ratio });
        writeln!(out, "{header}")?;
        for (partition, groups) in [("train", &self.train_groups), ("val", &self.val_groups)] {
            for g in groups {
                let line = SplitLine {
                    partition: partition.to_string(),
                    group: g.clone(),
                };
                writeln!(out, "{}", serde_json::to_string(&line)?)?;
            }
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<DatasetSplit> {
        let file = fs::File::open(path)?;
        let mut lines = BufReader::new(file).lines().enumerate();
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let (_, header) = lines
            .next()
            .ok_or_else(|| parse_err(1, "missing split header".into()))?;
        let header: serde_json::Value =
            serde_json::from_str(&header?).map_err(|e| parse_err(1, e.to_string()))?;
        let seed = header["seed"]
            .as_u64()
            .ok_or_else(|| parse_err(1, "header lacks seed".into()))?;
        let ratio = header["ratio"]
            .as_f64()
            .ok_or_else(|| parse_err(1, "header lacks ratio".into()))?;
        let mut split = DatasetSplit {
            train_groups: Vec::new(),
            val_groups: Vec::new(),
            seed,
            ratio,
        };
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: SplitLine =
                serde_json::from_str(&line).map_err(|e| parse_err(i + 1, e.to_string()))?;
            match entry.partition.as_str() {
                "train" => split.train_groups.push(entry.group),
                "val" => split.val_groups.push(entry.group),
                other => return Err(parse_err(i + 1, format!("unknown partition `{other}`"))),
            }
        }
        Ok(split)
    }
}

#[derive(Serialize, Deserialize)]
struct SplitLine {
    partition: String,
    #[serde(flatten)]
    group: AnchorGroup,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Reads a JSON-lines manifest. Blank lines are skipped, record order is kept
/// and relative paths are resolved against the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<Vec<PairRecord>> {
    let text = fs::read_to_string(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    parse_manifest(&text, path, base)
}

fn parse_manifest(text: &str, path: &Path, base: &Path) -> Result<Vec<PairRecord>> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut rec: PairRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        rec.validate()?;
        if !seen.insert(rec.pair_id.clone()) {
            return Err(Error::Validation {
                pair_id: rec.pair_id,
                msg: "duplicate pair_id".into(),
            });
        }
        rec.original_path = resolve(base, &rec.original_path);
        rec.candidate_path = resolve(base, &rec.candidate_path);
        records.push(rec);
    }
    Ok(records)
}

/// Writes records as JSON lines. Paths under `base` are written relative to
/// it so the manifest can be moved together with its images.
pub fn write_manifest(path: &Path, records: &[PairRecord]) -> Result<()> {
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let mut out = fs::File::create(path)?;
    for rec in records {
        let mut rec = rec.clone();
        if let Ok(rel) = rec.original_path.strip_prefix(base) {
            rec.original_path = rel.to_path_buf();
        }
        if let Ok(rel) = rec.candidate_path.strip_prefix(base) {
            rec.candidate_path = rel.to_path_buf();
        }
        writeln!(out, "{}", serde_json::to_string(&rec)?)?;
    }
    Ok(())
}

/// Confirms that every referenced image exists and has a readable header.
pub fn check_images(records: &[PairRecord]) -> Result<()> {
    let mut checked = HashSet::new();
    for rec in records {
        for p in [&rec.original_path, &rec.candidate_path] {
            if checked.insert(p.clone()) {
                image::image_dimensions(p).map_err(|e| Error::Decode {
                    path: p.clone(),
                    msg: e.to_string(),
                })?;
            }
        }
    }
    Ok(())
}

/// Number of similar pairs per attack type.
pub fn attack_histogram(records: &[PairRecord]) -> BTreeMap<AttackType, usize> {
    let mut hist = BTreeMap::new();
    for rec in records.iter().filter(|r| r.is_similar()) {
        *hist.entry(rec.attack).or_insert(0) += 1;
    }
    hist
}

/// Collects the forgeries of each original into one group per anchor id, in
/// order of first appearance. Dissimilar pairs contribute nothing.
pub fn group_by_anchor(records: &[PairRecord]) -> Result<Vec<AnchorGroup>> {
    let mut groups: Vec<AnchorGroup> = Vec::new();
    let mut by_anchor: HashMap<&str, usize> = HashMap::new();
    let mut owner: HashMap<PathBuf, String> = HashMap::new();

    let mut claim = |path: &Path, anchor: &str| -> Result<bool> {
        match owner.get(path) {
            Some(prev) if prev != anchor => Err(Error::Ambiguous {
                path: path.to_path_buf(),
                first: prev.clone(),
                second: anchor.to_string(),
            }),
            Some(_) => Ok(false),
            None => {
                owner.insert(path.to_path_buf(), anchor.to_string());
                Ok(true)
            }
        }
    };

    for rec in records.iter().filter(|r| r.is_similar()) {
        let idx = match by_anchor.get(rec.anchor_id.as_str()) {
            Some(&idx) => {
                if groups[idx].original_path != rec.original_path {
                    return Err(Error::Validation {
                        pair_id: rec.pair_id.clone(),
                        msg: format!(
                            "anchor {} already has original {}",
                            rec.anchor_id,
                            groups[idx].original_path.display()
                        ),
                    });
                }
                idx
            }
            None => {
                claim(&rec.original_path, &rec.anchor_id)?;
                groups.push(AnchorGroup {
                    anchor_id: rec.anchor_id.clone(),
                    original_path: rec.original_path.clone(),
                    forgery_paths: Vec::new(),
                });
                by_anchor.insert(rec.anchor_id.as_str(), groups.len() - 1);
                groups.len() - 1
            }
        };
        if claim(&rec.candidate_path, &rec.anchor_id)? {
            groups[idx]
                .forgery_paths
                .push((rec.candidate_path.clone(), rec.attack));
        }
    }
    Ok(groups)
}

/// Partitions whole anchor groups into train and validation sets.
///
/// The train count is `ratio * n` rounded half-up, kept within `1..n` so
/// neither side is empty. Both partitions keep the input order.
pub fn split_groups(groups: &[AnchorGroup], ratio: f64, seed: u64) -> Result<DatasetSplit> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio must lie in (0, 1), got {ratio}")));
    }
    if groups.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 anchor groups to split, got {}",
            groups.len()
        )));
    }
    let n = groups.len();
    let n_train = ((ratio * n as f64 + 0.5).floor() as usize).clamp(1, n - 1);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut in_train = vec![false; n];
    for &i in &order[..n_train] {
        in_train[i] = true;
    }
    let (train, val): (Vec<_>, Vec<_>) = groups
        .iter()
        .zip(&in_train)
        .partition(|(_, &is_train)| is_train);
    Ok(DatasetSplit {
        train_groups: train.into_iter().map(|(g, _)| g.clone()).collect(),
        val_groups: val.into_iter().map(|(g, _)| g.clone()).collect(),
        seed,
        ratio,
    })
}

/// Pair records assigned to the partition owning their anchor.
#[derive(Debug, Clone, Default)]
pub struct PairPartition {
    pub train: Vec<PairRecord>,
    pub val: Vec<PairRecord>,
    /// Records whose anchor belongs to neither partition.
    pub unassigned: Vec<PairRecord>,
}

pub fn partition_pairs(records: &[PairRecord], split: &DatasetSplit) -> PairPartition {
    let train = split.train_anchor_ids();
    let val = split.val_anchor_ids();
    let mut out = PairPartition::default();
    for rec in records {
        let bucket = if train.contains(rec.anchor_id.as_str()) {
            &mut out.train
        } else if val.contains(rec.anchor_id.as_str()) {
            &mut out.val
        } else {
            &mut out.unassigned
        };
        bucket.push(rec.clone());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, anchor: &str, cand: &str, label: Label, attack: AttackType) -> PairRecord {
        PairRecord {
            pair_id: id.into(),
            original_path: format!("/o/{anchor}.png").into(),
            candidate_path: cand.into(),
            label,
            attack,
            anchor_id: anchor.into(),
        }
    }

    fn parse(text: &str) -> Result<Vec<PairRecord>> {
        parse_manifest(text, Path::new("m.jsonl"), Path::new("/data"))
    }

    #[test]
    fn empty_manifest() {
        assert!(parse("").unwrap().is_empty());
        assert!(parse("\n\n").unwrap().is_empty());
    }

    #[test]
    fn single_record_resolves_relative_paths() {
        let line = r#"{"pair_id":"p1","original_path":"o/a.png","candidate_path":"/abs/c.png","label":"similar","attack":"inpainting","anchor_id":"a1"}"#;
        let recs = parse(line).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].attack, AttackType::Inpainting);
        assert_eq!(recs[0].original_path, PathBuf::from("/data/o/a.png"));
        assert_eq!(recs[0].candidate_path, PathBuf::from("/abs/c.png"));
    }

    #[test]
    fn dissimilar_with_attack_is_rejected() {
        let line = r#"{"pair_id":"bad","original_path":"a","candidate_path":"b","label":"dissimilar","attack":"cutmix","anchor_id":"a1"}"#;
        match parse(line) {
            Err(Error::Validation { pair_id, .. }) => assert_eq!(pair_id, "bad"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn similar_without_attack_is_rejected() {
        let line = r#"{"pair_id":"s","original_path":"a","candidate_path":"b","label":"similar","attack":"none","anchor_id":"a1"}"#;
        assert!(matches!(parse(line), Err(Error::Validation { .. })));
    }

    #[test]
    fn malformed_line_names_line_number() {
        let good = r#"{"pair_id":"p1","original_path":"a","candidate_path":"b","label":"dissimilar","attack":"none","anchor_id":"a1"}"#;
        let text = format!("{good}\n{{not json\n");
        match parse(&text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_pair_id_is_rejected() {
        let good = r#"{"pair_id":"p1","original_path":"a","candidate_path":"b","label":"dissimilar","attack":"none","anchor_id":"a1"}"#;
        assert!(matches!(
            parse(&format!("{good}\n{good}")),
            Err(Error::Validation { .. })
        ));
    }

    #[test]
    fn single_anchor_group() {
        let recs: Vec<_> = (0..3)
            .map(|i| rec(&format!("p{i}"), "a1", &format!("/f/{i}.png"), Label::Similar, AttackType::Adversarial))
            .collect();
        let groups = group_by_anchor(&recs).unwrap();
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].forgery_paths.len(), 3);
    }

    #[test]
    fn seven_record_fixture_groups() {
        let mut recs = vec![
            rec("s1", "a1", "/f/1.png", Label::Similar, AttackType::Inpainting),
            rec("s2", "a1", "/f/2.png", Label::Similar, AttackType::Cutmix),
            rec("s3", "a2", "/f/3.png", Label::Similar, AttackType::StyleTransfer),
        ];
        for i in 0..4 {
            recs.push(rec(&format!("d{i}"), "a3", &format!("/x/{i}.png"), Label::Dissimilar, AttackType::None));
        }
        let groups = group_by_anchor(&recs).unwrap();
        let sizes: Vec<_> = groups.iter().map(|g| (g.anchor_id.as_str(), g.forgery_paths.len())).collect();
        assert_eq!(sizes, vec![("a1", 2), ("a2", 1)]);
        assert!(group_by_anchor(&[]).unwrap().is_empty());
    }

    #[test]
    fn candidate_claimed_twice_is_ambiguous() {
        let recs = vec![
            rec("s1", "a1", "/f/same.png", Label::Similar, AttackType::Inpainting),
            rec("s2", "a2", "/f/same.png", Label::Similar, AttackType::Inpainting),
        ];
        assert!(matches!(group_by_anchor(&recs), Err(Error::Ambiguous { .. })));
    }

    fn groups(n: usize) -> Vec<AnchorGroup> {
        (0..n)
            .map(|i| AnchorGroup {
                anchor_id: format!("a{i}"),
                original_path: format!("/o/{i}.png").into(),
                forgery_paths: vec![(format!("/f/{i}.png").into(), AttackType::Inpainting)],
            })
            .collect()
    }

    #[test]
    fn eighty_twenty_split() {
        let split = split_groups(&groups(10), 0.8, 3).unwrap();
        assert_eq!(split.train_groups.len(), 8);
        assert_eq!(split.val_groups.len(), 2);
        assert!(split.leaked_paths().is_empty());
    }

    #[test]
    fn smallest_split() {
        let split = split_groups(&groups(2), 0.5, 0).unwrap();
        assert_eq!(split.train_groups.len(), 1);
        assert_eq!(split.val_groups.len(), 1);
        assert!(split.train_anchor_ids().is_disjoint(&split.val_anchor_ids()));
    }

    #[test]
    fn split_is_deterministic() {
        let g = groups(17);
        assert_eq!(split_groups(&g, 0.7, 11).unwrap(), split_groups(&g, 0.7, 11).unwrap());
    }

    #[test]
    fn split_rejects_bad_input() {
        assert!(matches!(split_groups(&groups(1), 0.8, 0), Err(Error::InsufficientData(_))));
        assert!(matches!(split_groups(&groups(4), 1.0, 0), Err(Error::Config(_))));
    }

    #[test]
    fn table_one_histogram() {
        let counts = [
            (AttackType::Inpainting, 5063),
            (AttackType::StyleTransfer, 3074),
            (AttackType::Adversarial, 2730),
            (AttackType::Cutmix, 2000),
        ];
        let mut text = String::new();
        let mut k = 0;
        for (attack, n) in counts {
            for _ in 0..n {
                text.push_str(&format!(
                    "{{\"pair_id\":\"p{k}\",\"original_path\":\"o{k}\",\"candidate_path\":\"c{k}\",\"label\":\"similar\",\"attack\":\"{attack}\",\"anchor_id\":\"a{k}\"}}\n"
                ));
                k += 1;
            }
        }
        let recs = parse(&text).unwrap();
        let hist = attack_histogram(&recs);
        assert_eq!(hist[&AttackType::Inpainting], 5063);
        assert_eq!(hist[&AttackType::Cutmix], 2000);
        assert_eq!(hist.values().sum::<usize>(), 12_867);
    }

    #[test]
    fn split_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("split.jsonl");
        let split = split_groups(&groups(5), 0.6, 9).unwrap();
        split.write(&path).unwrap();
        assert_eq!(DatasetSplit::read(&path).unwrap(), split);
    }

    proptest::proptest! {
        #[test]
        fn grouping_reconstructs_candidates(assign in proptest::collection::vec(0usize..6, 0..40)) {
            let recs: Vec<_> = assign
                .iter()
                .enumerate()
                .map(|(i, a)| rec(&format!("p{i}"), &format!("a{a}"), &format!("/f/{i}.png"), Label::Similar, AttackType::Adversarial))
                .collect();
            let groups = group_by_anchor(&recs).unwrap();
            let mut flat: Vec<PathBuf> = groups.iter().flat_map(|g| g.forgery_paths.iter().map(|(p, _)| p.clone())).collect();
            flat.sort();
            let mut expected: Vec<PathBuf> = recs.iter().map(|r| r.candidate_path.clone()).collect();
            expected.sort();
            proptest::prop_assert_eq!(flat, expected);
        }

        #[test]
        fn splits_never_leak(n in 2usize..40, ratio in 0.05f64..0.95, seed in 0u64..1000) {
            let split = split_groups(&groups(n), ratio, seed).unwrap();
            proptest::prop_assert!(split.leaked_paths().is_empty());
            proptest::prop_assert!(split.train_anchor_ids().is_disjoint(&split.val_anchor_ids()));
            proptest::prop_assert_eq!(split.train_groups.len() + split.val_groups.len(), n);
        }
    }
}
