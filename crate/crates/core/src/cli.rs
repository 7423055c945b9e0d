//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 for usage, validation and configuration
//! errors, 2 for runtime and numeric failures. Human summaries go to stdout;
//! `--out` receives machine-readable JSON lines.

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use serde::Serialize;
use serde_json::Value;

use crate::checkpoint::load_checkpoint;
use crate::criterion::{check_infringement_with, load_raster, CriterionConfig, RepresentationDomain, Transform};
use crate::data::{group_by_anchor, load_manifest, partition_pairs, split_groups, write_manifest, AttackType};
use crate::detector::{build_index, pairwise_score, query, EmbeddingIndex, DEFAULT_TOP_K};
use crate::embed::{BackboneConfig, HeadVariant, ImageEmbedder, Model, ModelConfig, ProbePoint, WeightsSource};
use crate::error::{Error, Result};
use crate::eval::{ablate_probe, calibrate_threshold, evaluate, format_ablation, format_table};
use crate::synth::{generate, SynthConfig};
use crate::train::{train, TrainConfig, TrainOptions};

/// Default directory for data and artifacts when a path flag is omitted.
pub const DATA_ROOT_ENV: &str = "FORGECON_DATA_ROOT";

#[derive(Debug, Parser)]
#[command(name = "forgecon", version, about = "Contrastive forgery detection for generated artwork")]
pub struct Cli {
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Compute device; only `cpu` is supported.
    #[arg(long, global = true, default_value = "cpu")]
    pub device: String,

    #[arg(long, global = true, default_value = "info")]
    pub log_level: String,

    /// JSON file with one object per subcommand (`{"train": {...}}`);
    /// explicit flags win over its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic forgery corpus and its manifest.
    Synth(SynthArgs),
    /// Train an encoder on a manifest and write a checkpoint.
    Train(TrainArgs),
    /// Embed original artworks into a detection index.
    BuildIndex(BuildIndexArgs),
    /// Score query images against an index.
    Detect(DetectArgs),
    /// Cosine similarity of two images.
    Pairscore(PairscoreArgs),
    /// Pick the F1-maximizing threshold on labeled pairs.
    Calibrate(CalibrateArgs),
    /// Precision, recall and F1 on labeled pairs.
    Evaluate(EvaluateArgs),
    /// Compare the encoder and projection probes.
    Ablate(AblateArgs),
    /// Region-wise infringement check between two images.
    CriterionCheck(CriterionArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    pub anchors: usize,
    /// Forgeries of each attack kind per anchor.
    #[arg(long, default_value_t = 1)]
    pub forgeries_per_attack: usize,
    /// Cap on forgeries per anchor; attack kinds rotate across anchors.
    #[arg(long)]
    pub per_anchor_limit: Option<usize>,
    #[arg(long, default_value_t = 64)]
    pub image_size: u32,
    #[arg(long, default_value_t = 20)]
    pub dissimilar: usize,
    /// Output directory [default: $FORGECON_DATA_ROOT]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum EncoderChoice {
    Toy,
    Reference,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Manifest file or a directory holding manifest.jsonl [default: $FORGECON_DATA_ROOT]
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "toy")]
    pub encoder: EncoderChoice,
    /// Safetensors weights for the reference encoder; random init otherwise.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    pub toy_dim: usize,
    /// Side of the pooling grid; `toy_dim` must divide by its square.
    #[arg(long, default_value_t = 1)]
    pub toy_grid: usize,
    /// Input resolution; the reference encoder always uses 224.
    #[arg(long, default_value_t = 64)]
    pub input_size: usize,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    /// Warm-up epochs; when omitted and not below --epochs, a fifth of the epochs.
    #[arg(long, default_value_t = 10)]
    pub warmup_epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 10)]
    pub patience: usize,
    #[arg(long, default_value_t = 0.07)]
    pub temperature: f64,
    #[arg(long, default_value = "mlp")]
    pub head: HeadVariant,
    #[arg(long, default_value_t = 0.0)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 0.8)]
    pub split_ratio: f64,
    /// Checkpoint path [default: model.ckpt next to the manifest]
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Training summary as JSON lines
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BuildIndexArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Manifest whose originals are indexed, keyed by anchor_id.
    #[arg(long)]
    pub originals: PathBuf,
    #[arg(long, default_value = "encoder")]
    pub probe: ProbePoint,
    /// Index file; the checkpoint is copied next to it as <out>.model
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub index: PathBuf,
    /// Query image; repeatable.
    #[arg(long, required = true)]
    pub image: Vec<PathBuf>,
    #[arg(long)]
    pub threshold: f64,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    pub k: usize,
    /// Checkpoint [default: <index>.model]
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PairscoreArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long, default_value = "encoder")]
    pub probe: ProbePoint,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Validation pairs manifest.
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long, default_value = "encoder")]
    pub probe: ProbePoint,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Test pairs manifest.
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long, default_value = "encoder")]
    pub probe: ProbePoint,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Validation pairs manifest to calibrate the threshold on.
    #[arg(long)]
    pub calibrate: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Validation pairs manifest used for calibration.
    #[arg(long)]
    pub val: PathBuf,
    /// Test pairs manifest.
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CriterionArgs {
    /// The generated image y.
    #[arg(long)]
    pub generated: PathBuf,
    /// The original artwork x.
    #[arg(long)]
    pub original: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    pub delta: f64,
    #[arg(long, default_value = "pixel")]
    pub domain: RepresentationDomain,
    /// Comma-separated transforms, e.g. identity,horizontal_flip,rotate90
    #[arg(long, value_delimiter = ',', default_value = "all")]
    pub transforms: Vec<String>,
    #[arg(long, default_value_t = 1.0 / 16.0)]
    pub min_region_fraction: f64,
    /// Include every grid distance in the --out record.
    #[arg(long)]
    pub all_distances: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `argv`, runs the subcommand and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match Cli::command().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return 1;
        }
    };
    let _ = env_logger::Builder::new().parse_filters(&cli.log_level).try_init();
    match dispatch(&cli, &matches) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: &Cli, matches: &ArgMatches) -> Result<()> {
    if cli.device != "cpu" {
        return Err(Error::Config(format!("device `{}` is not available; use cpu", cli.device)));
    }
    let file = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            serde_json::from_str::<Value>(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => Value::Null,
    };
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let section = file.get(name).cloned().unwrap_or(Value::Null);
    let flags = Flags { matches: sub, section: &section };
    match &cli.command {
        Command::Synth(a) => cmd_synth(a, cli.seed, &flags),
        Command::Train(a) => cmd_train(a, cli.seed, &flags),
        Command::BuildIndex(a) => cmd_build_index(a),
        Command::Detect(a) => cmd_detect(a),
        Command::Pairscore(a) => cmd_pairscore(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::CriterionCheck(a) => cmd_criterion(a, &flags),
    }
}

/// Resolves a value from an explicit flag, the config file, then the flag default.
struct Flags<'a> {
    matches: &'a ArgMatches,
    section: &'a Value,
}

impl Flags<'_> {
    fn explicit(&self, id: &str) -> bool {
        self.matches.value_source(id) == Some(ValueSource::CommandLine)
    }

    fn from_file(&self, id: &str) -> bool {
        self.section.get(id).is_some()
    }

    fn pick<T: serde::de::DeserializeOwned>(&self, id: &str, flag: T) -> Result<T> {
        if self.explicit(id) {
            return Ok(flag);
        }
        match self.section.get(id) {
            Some(v) => serde_json::from_value(v.clone()).map_err(|e| Error::Config(format!("config key `{id}`: {e}"))),
            None => Ok(flag),
        }
    }
}

fn data_root() -> Result<PathBuf> {
    std::env::var_os(DATA_ROOT_ENV)
        .map(PathBuf::from)
        .ok_or_else(|| Error::Config(format!("no path given and {DATA_ROOT_ENV} is unset")))
}

fn echo_config<T: Serialize>(what: &str, config: &T) {
    log::info!("effective {what} config: {}", serde_json::to_string(config).unwrap_or_default());
}

fn write_records<T: Serialize>(out: Option<&Path>, records: &[T]) -> Result<()> {
    if let Some(path) = out {
        let mut f = fs::File::create(path)?;
        for r in records {
            writeln!(f, "{}", serde_json::to_string(r)?)?;
        }
    }
    Ok(())
}

fn cmd_synth(a: &SynthArgs, seed: u64, flags: &Flags) -> Result<()> {
    let per_attack: usize = flags.pick("forgeries_per_attack", a.forgeries_per_attack)?;
    let config = SynthConfig {
        n_anchors: flags.pick("anchors", a.anchors)?,
        forgeries_per_anchor: AttackType::FORGERIES.iter().map(|&k| (k, per_attack)).collect(),
        per_anchor_limit: flags.pick("per_anchor_limit", a.per_anchor_limit)?,
        image_size: flags.pick("image_size", a.image_size)?,
        n_dissimilar: flags.pick("dissimilar", a.dissimilar)?,
        seed,
    };
    echo_config("synth", &config);
    let out = match &a.out {
        Some(p) => p.clone(),
        None => data_root()?,
    };
    let manifest = generate(&config, &out)?;
    let records = load_manifest(&manifest)?;
    let similar = records.iter().filter(|r| r.is_similar()).count();
    println!("{}: {similar} similar, {} dissimilar pairs", manifest.display(), records.len() - similar);
    Ok(())
}

fn resolve_manifest(path: Option<&PathBuf>) -> Result<PathBuf> {
    let p = match path {
        Some(p) => p.clone(),
        None => data_root()?,
    };
    Ok(if p.is_dir() { p.join("manifest.jsonl") } else { p })
}

fn cmd_train(a: &TrainArgs, seed: u64, flags: &Flags) -> Result<()> {
    let manifest = resolve_manifest(a.manifest.as_ref())?;
    let dir = manifest.parent().unwrap_or(Path::new(".")).to_path_buf();
    let epochs: usize = flags.pick("epochs", a.epochs)?;
    let mut warmup: usize = flags.pick("warmup_epochs", a.warmup_epochs)?;
    if !flags.explicit("warmup_epochs") && !flags.from_file("warmup_epochs") && warmup >= epochs {
        warmup = epochs / 5;
    }
    let config = TrainConfig {
        epochs,
        warmup_epochs: warmup,
        base_lr: flags.pick("lr", a.lr)?,
        momentum: flags.pick("momentum", a.momentum)?,
        batch_size: flags.pick("batch_size", a.batch_size)?,
        patience: flags.pick("patience", a.patience)?,
        temperature: flags.pick("temperature", a.temperature)?,
        seed,
        head_variant: flags.pick("head", a.head)?,
        weight_decay: flags.pick("weight_decay", a.weight_decay)?,
        ..TrainConfig::default()
    };
    let ratio: f64 = flags.pick("split_ratio", a.split_ratio)?;
    echo_config("train", &config);
    config.validate()?;

    let model_config = match a.encoder {
        EncoderChoice::Toy => {
            let mut mc = ModelConfig::toy(flags.pick("toy_dim", a.toy_dim)?, flags.pick("input_size", a.input_size)?, config.head_variant);
            if let BackboneConfig::ToyCnn { grid, .. } = &mut mc.backbone {
                *grid = flags.pick("toy_grid", a.toy_grid)?;
            }
            mc
        }
        EncoderChoice::Reference => ModelConfig::reference(config.head_variant),
    };
    let weights = match &a.weights {
        Some(p) => WeightsSource::File(p.clone()),
        None => WeightsSource::Random { seed },
    };
    let model = Model::new(model_config, &weights)?;

    let records = load_manifest(&manifest)?;
    let split = split_groups(&group_by_anchor(&records)?, ratio, seed)?;
    split.write(&dir.join("split.jsonl"))?;
    let parts = partition_pairs(&records, &split);
    write_manifest(&dir.join("train_pairs.jsonl"), &parts.train)?;
    write_manifest(&dir.join("val_pairs.jsonl"), &parts.val)?;

    let checkpoint = a.checkpoint.clone().unwrap_or_else(|| dir.join("model.ckpt"));
    let options = TrainOptions {
        log_path: Some(dir.join("train_log.jsonl")),
        checkpoint_path: Some(checkpoint.clone()),
    };
    let report = train(&split, &model, &config, &options)?;
    println!(
        "trained {} epochs (best {} with validation loss {:.4}{}); checkpoint {}",
        report.log.len(),
        report.best_epoch,
        report.best_val_loss,
        if report.stopped_early { ", stopped early" } else { "" },
        checkpoint.display()
    );
    write_records(a.out.as_deref(), &report.log)
}

fn cmd_build_index(a: &BuildIndexArgs) -> Result<()> {
    let model = load_checkpoint(&a.model)?;
    let records = load_manifest(&a.originals)?;
    let mut originals: Vec<(String, PathBuf)> = Vec::new();
    for r in records.iter().filter(|r| r.is_similar()) {
        if !originals.iter().any(|(id, _)| id == &r.anchor_id) {
            originals.push((r.anchor_id.clone(), r.original_path.clone()));
        }
    }
    let index = build_index(&originals, &model, a.probe)?;
    index.save(&a.out)?;
    fs::copy(&a.model, sidecar(&a.out))?;
    println!("indexed {} originals at {} ({}-d)", index.len(), a.probe, index.dim());
    Ok(())
}

fn sidecar(index: &Path) -> PathBuf {
    let mut s = index.as_os_str().to_owned();
    s.push(".model");
    PathBuf::from(s)
}

fn cmd_detect(a: &DetectArgs) -> Result<()> {
    let index = EmbeddingIndex::load(&a.index)?;
    let model = load_checkpoint(&a.model.clone().unwrap_or_else(|| sidecar(&a.index)))?;
    let mut verdicts = Vec::with_capacity(a.image.len());
    for image in &a.image {
        let v = query(&index, image, &model, a.threshold, a.k)?;
        println!(
            "{}: {} (best {} at {:.4}, threshold {:.4})",
            v.query_id,
            if v.infringing { "INFRINGING" } else { "clear" },
            v.best_match,
            v.best_score,
            v.threshold_used
        );
        verdicts.push(v);
    }
    write_records(a.out.as_deref(), &verdicts)
}

#[derive(Serialize)]
struct PairscoreRecord<'a> {
    a: &'a Path,
    b: &'a Path,
    probe: ProbePoint,
    score: f64,
}

fn cmd_pairscore(a: &PairscoreArgs) -> Result<()> {
    let model = load_checkpoint(&a.model)?;
    let score = pairwise_score(&a.a, &a.b, &model, a.probe)?;
    println!("{score:.6}");
    write_records(a.out.as_deref(), &[PairscoreRecord { a: &a.a, b: &a.b, probe: a.probe, score }])
}

#[derive(Serialize)]
struct ThresholdRecord {
    probe: ProbePoint,
    threshold: f64,
    model: String,
}

fn cmd_calibrate(a: &CalibrateArgs) -> Result<()> {
    let model = load_checkpoint(&a.model)?;
    let pairs = load_manifest(&a.pairs)?;
    let threshold = calibrate_threshold(&pairs, &model, a.probe)?;
    println!("threshold {threshold:.6} ({} pairs, probe {})", pairs.len(), a.probe);
    write_records(a.out.as_deref(), &[ThresholdRecord { probe: a.probe, threshold, model: model.fingerprint() }])
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    match (a.threshold, &a.calibrate) {
        (Some(_), Some(_)) => return Err(Error::Config("give either --threshold or --calibrate, not both".into())),
        (None, None) => {
            return Err(Error::Config(
                "evaluate needs a decision threshold: pass --threshold or --calibrate <validation manifest>".into(),
            ))
        }
        _ => {}
    }
    let model = load_checkpoint(&a.model)?;
    let threshold = match (a.threshold, &a.calibrate) {
        (Some(t), _) => t,
        (None, Some(val)) => calibrate_threshold(&load_manifest(val)?, &model, a.probe)?,
        (None, None) => unreachable!("checked above"),
    };
    let report = evaluate(&load_manifest(&a.pairs)?, &model, a.probe, threshold)?;
    print!("{}", format_table(&report));
    write_records(a.out.as_deref(), &[report])
}

fn cmd_ablate(a: &AblateArgs) -> Result<()> {
    let model = load_checkpoint(&a.model)?;
    let report = ablate_probe(&load_manifest(&a.val)?, &load_manifest(&a.test)?, &model)?;
    print!("{}", format_ablation(&report));
    write_records(a.out.as_deref(), &[report])
}

fn parse_transforms(names: &[String]) -> Result<Vec<Transform>> {
    if names.len() == 1 && names[0] == "all" {
        return Ok(Transform::all());
    }
    names.iter().filter(|n| !n.is_empty()).map(|n| n.parse()).collect()
}

fn cmd_criterion(a: &CriterionArgs, flags: &Flags) -> Result<()> {
    let transforms: Vec<String> = flags.pick("transforms", a.transforms.clone())?;
    let config = CriterionConfig {
        delta: flags.pick("delta", a.delta)?,
        min_region_fraction: flags.pick("min_region_fraction", a.min_region_fraction)?,
        domain: flags.pick("domain", a.domain)?,
        transforms: parse_transforms(&transforms)?,
    };
    echo_config("criterion", &config);
    let report = check_infringement_with(&load_raster(&a.generated)?, &load_raster(&a.original)?, &config, a.all_distances)?;
    match &report.witness {
        Some(w) => println!(
            "INFRINGING: {} region {}x{}+{}+{} distance {:.4} < {:.4}",
            w.transform, w.region.width, w.region.height, w.region.x, w.region.y, w.distance, w.threshold
        ),
        None => {
            let c = report.closest.as_ref().expect("grid is never empty");
            println!("clear: closest {} region distance {:.4} vs threshold {:.4}", c.transform, c.distance, c.threshold);
        }
    }
    write_records(a.out.as_deref(), &[report])
}
