use std::path::{Path, PathBuf};
use std::sync::Mutex;

use candle_core::{DType, Device, Module, ModuleT, Tensor, Var};
use candle_nn::{BatchNorm, Conv2d, Conv2dConfig, Linear, VarBuilder, VarMap};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::external::{EmbeddingProvider, ExternalEncoder};
use super::preprocess::{Preprocessing, PreprocessedImage};
use super::{EmbeddingVector, ImageEmbedder, ProbePoint};
use crate::error::{Error, Result};

/// Width of the reference backbone's pooled features.
pub const REFERENCE_FEATURE_DIM: usize = 2048;
/// Width of the contrastive space.
pub const PROJECTION_DIM: usize = 128;

const EMBED_CHUNK: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadVariant {
    Linear,
    Mlp,
}

impl std::str::FromStr for HeadVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear" => Ok(HeadVariant::Linear),
            "mlp" => Ok(HeadVariant::Mlp),
            other => Err(format!("unknown head variant `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub variant: HeadVariant,
    pub input_dim: usize,
    /// Only used by the MLP variant.
    pub hidden_dim: usize,
    pub output_dim: usize,
}

impl HeadConfig {
    /// Head for a backbone of width `input_dim`: hidden layer as wide as the
    /// input, output into the 128-d contrastive space.
    pub fn for_features(variant: HeadVariant, input_dim: usize) -> Self {
        HeadConfig {
            variant,
            input_dim,
            hidden_dim: input_dim,
            output_dim: PROJECTION_DIM,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackboneConfig {
    /// ResNet-50 without its classifier.
    ReferenceCnn,
    /// Three conv/batch-norm blocks, then average pooling onto a
    /// `grid × grid` layout of `dim / grid²` channels, flattened.
    ToyCnn {
        dim: usize,
        widths: [usize; 2],
        #[serde(default = "one")]
        grid: usize,
    },
}

fn one() -> usize {
    1
}

impl BackboneConfig {
    pub fn feature_dim(&self) -> usize {
        match self {
            BackboneConfig::ReferenceCnn => REFERENCE_FEATURE_DIM,
            BackboneConfig::ToyCnn { dim, .. } => *dim,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub head: HeadConfig,
    pub preprocessing: Preprocessing,
}

impl ModelConfig {
    pub fn reference(head: HeadVariant) -> Self {
        ModelConfig {
            backbone: BackboneConfig::ReferenceCnn,
            head: HeadConfig::for_features(head, REFERENCE_FEATURE_DIM),
            preprocessing: Preprocessing::imagenet(224),
        }
    }

    /// Desk-scale configuration: `dim`-wide features, `input_size` pixels.
    pub fn toy(dim: usize, input_size: usize, head: HeadVariant) -> Self {
        ModelConfig {
            backbone: BackboneConfig::ToyCnn {
                dim,
                widths: [16, 32],
                grid: 1,
            },
            head: HeadConfig::for_features(head, dim),
            preprocessing: Preprocessing::imagenet(input_size),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let feat = self.backbone.feature_dim();
        if self.head.input_dim != feat {
            return Err(Error::Config(format!(
                "projection head expects {} inputs but the backbone yields {feat}",
                self.head.input_dim
            )));
        }
        if self.head.output_dim == 0 || (self.head.variant == HeadVariant::Mlp && self.head.hidden_dim == 0) {
            return Err(Error::Config("projection head dimensions must be positive".into()));
        }
        if feat == 0 {
            return Err(Error::Config("feature dimension must be positive".into()));
        }
        if let BackboneConfig::ToyCnn { dim, grid, .. } = self.backbone {
            if grid == 0 || dim % (grid * grid) != 0 || (self.preprocessing.size / 4) % grid != 0 {
                return Err(Error::Config(format!(
                    "toy grid {grid} must divide both the feature width {dim} (as grid²) and the pooled map {}",
                    self.preprocessing.size / 4
                )));
            }
        }
        let min_size = match self.backbone {
            BackboneConfig::ReferenceCnn => 32,
            BackboneConfig::ToyCnn { .. } => 4,
        };
        if self.preprocessing.size < min_size {
            return Err(Error::Config(format!(
                "input size {} is below the backbone minimum of {min_size}",
                self.preprocessing.size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WeightsSource {
    /// Seeded He-normal initialization.
    Random { seed: u64 },
    /// Backbone weights from a safetensors file with torchvision parameter
    /// names (`conv1.weight`, `layer1.0.bn1.running_mean`, ...). Tensors
    /// without a matching parameter are ignored; the head keeps its seeded
    /// initialization unless the file provides `head.*` tensors.
    File(PathBuf),
}

struct ToyCnn {
    layers: [(Conv2d, BatchNorm); 3],
    grid: usize,
}

impl ToyCnn {
    fn new(vb: VarBuilder, dim: usize, widths: [usize; 2], grid: usize) -> Result<Self> {
        let chans = [3, widths[0], widths[1], dim / (grid * grid)];
        let layer = |i: usize| -> Result<(Conv2d, BatchNorm)> {
            Ok((
                conv(vb.pp(format!("conv{}", i + 1)), chans[i], chans[i + 1], 3, 1)?,
                bn(vb.pp(format!("bn{}", i + 1)), chans[i + 1])?,
            ))
        };
        Ok(ToyCnn {
            layers: [layer(0)?, layer(1)?, layer(2)?],
            grid,
        })
    }

    fn forward_t(&self, x: &Tensor, train: bool) -> candle_core::Result<Tensor> {
        let block = |x: &Tensor, i: usize| -> candle_core::Result<Tensor> {
            let (c, b) = &self.layers[i];
            b.forward_t(&c.forward(x)?, train)?.relu()
        };
        let x = block(x, 0)?.max_pool2d(2)?;
        let x = block(&x, 1)?.max_pool2d(2)?;
        let x = block(&x, 2)?;
        if self.grid == 1 {
            return x.mean((2, 3));
        }
        let (_, _, h, w) = x.dims4()?;
        x.avg_pool2d((h / self.grid, w / self.grid))?.flatten_from(1)
    }
}

struct Bottleneck {
    conv1: Conv2d,
    bn1: BatchNorm,
    conv2: Conv2d,
    bn2: BatchNorm,
    conv3: Conv2d,
    bn3: BatchNorm,
    downsample: Option<(Conv2d, BatchNorm)>,
}

fn conv(vb: VarBuilder, cin: usize, cout: usize, k: usize, stride: usize) -> Result<Conv2d> {
    let cfg = Conv2dConfig {
        padding: k / 2,
        stride,
        ..Default::default()
    };
    Ok(candle_nn::conv2d_no_bias(cin, cout, k, cfg, vb)?)
}

fn bn(vb: VarBuilder, c: usize) -> Result<BatchNorm> {
    Ok(candle_nn::batch_norm(c, 1e-5, vb)?)
}

impl Bottleneck {
    fn new(vb: VarBuilder, cin: usize, width: usize, stride: usize) -> Result<Self> {
        let cout = width * 4;
        let downsample = if stride != 1 || cin != cout {
            Some((
                conv(vb.pp("downsample.0"), cin, cout, 1, stride)?,
                bn(vb.pp("downsample.1"), cout)?,
            ))
        } else {
            None
        };
        Ok(Bottleneck {
            conv1: conv(vb.pp("conv1"), cin, width, 1, 1)?,
            bn1: bn(vb.pp("bn1"), width)?,
            conv2: conv(vb.pp("conv2"), width, width, 3, stride)?,
            bn2: bn(vb.pp("bn2"), width)?,
            conv3: conv(vb.pp("conv3"), width, cout, 1, 1)?,
            bn3: bn(vb.pp("bn3"), cout)?,
            downsample,
        })
    }

    fn forward_t(&self, x: &Tensor, train: bool) -> candle_core::Result<Tensor> {
        let out = self.bn1.forward_t(&self.conv1.forward(x)?, train)?.relu()?;
        let out = self.bn2.forward_t(&self.conv2.forward(&out)?, train)?.relu()?;
        let out = self.bn3.forward_t(&self.conv3.forward(&out)?, train)?;
        let identity = match &self.downsample {
            Some((c, b)) => b.forward_t(&c.forward(x)?, train)?,
            None => x.clone(),
        };
        (out + identity)?.relu()
    }
}

struct ResNet50 {
    conv1: Conv2d,
    bn1: BatchNorm,
    layers: Vec<Bottleneck>,
}

impl ResNet50 {
    fn new(vb: VarBuilder) -> Result<Self> {
        let mut layers = Vec::new();
        let mut cin = 64;
        for (li, (blocks, width)) in [(3, 64), (4, 128), (6, 256), (3, 512)].into_iter().enumerate() {
            for b in 0..blocks {
                let stride = if b == 0 && li > 0 { 2 } else { 1 };
                let block_vb = vb.pp(format!("layer{}.{b}", li + 1));
                layers.push(Bottleneck::new(block_vb, cin, width, stride)?);
                cin = width * 4;
            }
        }
        Ok(ResNet50 {
            conv1: conv(vb.pp("conv1"), 3, 64, 7, 2)?,
            bn1: bn(vb.pp("bn1"), 64)?,
            layers,
        })
    }

    fn forward_t(&self, x: &Tensor, train: bool) -> candle_core::Result<Tensor> {
        let x = self.bn1.forward_t(&self.conv1.forward(x)?, train)?.relu()?;
        // Zero padding equals -inf padding after the ReLU.
        let mut x = x
            .pad_with_zeros(2, 1, 1)?
            .pad_with_zeros(3, 1, 1)?
            .max_pool2d_with_stride(3, 2)?;
        for block in &self.layers {
            x = block.forward_t(&x, train)?;
        }
        x.mean((2, 3))
    }
}

enum Backbone {
    Toy(ToyCnn),
    Reference(Box<ResNet50>),
}

impl Backbone {
    fn forward_t(&self, x: &Tensor, train: bool) -> candle_core::Result<Tensor> {
        match self {
            Backbone::Toy(m) => m.forward_t(x, train),
            Backbone::Reference(m) => m.forward_t(x, train),
        }
    }
}

enum ProjectionHead {
    Linear(Linear),
    Mlp(Linear, Linear),
}

impl ProjectionHead {
    fn new(vb: VarBuilder, cfg: &HeadConfig) -> Result<Self> {
        Ok(match cfg.variant {
            HeadVariant::Linear => {
                ProjectionHead::Linear(candle_nn::linear(cfg.input_dim, cfg.output_dim, vb.pp("0"))?)
            }
            HeadVariant::Mlp => ProjectionHead::Mlp(
                candle_nn::linear(cfg.input_dim, cfg.hidden_dim, vb.pp("0"))?,
                candle_nn::linear(cfg.hidden_dim, cfg.output_dim, vb.pp("2"))?,
            ),
        })
    }

    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        match self {
            ProjectionHead::Linear(l) => l.forward(x),
            ProjectionHead::Mlp(a, b) => b.forward(&a.forward(x)?.relu()?),
        }
    }
}

fn is_running_stat(name: &str) -> bool {
    name.ends_with("running_mean") || name.ends_with("running_var")
}

/// Trainable encoder plus projection head.
pub struct Model {
    config: ModelConfig,
    varmap: VarMap,
    backbone: Backbone,
    head: ProjectionHead,
    fingerprint: Mutex<Option<String>>,
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl Model {
    pub fn new(config: ModelConfig, weights: &WeightsSource) -> Result<Self> {
        let model = Model::build(config)?;
        model.init_random(match weights {
            WeightsSource::Random { seed } => *seed,
            WeightsSource::File(_) => 0,
        })?;
        if let WeightsSource::File(path) = weights {
            model.load_weights_file(path)?;
        }
        Ok(model)
    }

    fn build(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let varmap = VarMap::new();
        let vb = VarBuilder::from_varmap(&varmap, DType::F32, &Device::Cpu);
        let backbone = match config.backbone {
            BackboneConfig::ReferenceCnn => Backbone::Reference(Box::new(ResNet50::new(vb.clone())?)),
            BackboneConfig::ToyCnn { dim, widths, grid } => {
                Backbone::Toy(ToyCnn::new(vb.pp("toy"), dim, widths, grid)?)
            }
        };
        let head = ProjectionHead::new(vb.pp("head"), &config.head)?;
        Ok(Model {
            config,
            varmap,
            backbone,
            head,
            fingerprint: Mutex::new(None),
        })
    }

    /// Rebuilds a model from saved tensors. Every parameter must be present
    /// with the expected shape.
    pub fn from_tensors(config: ModelConfig, tensors: &[(String, Tensor)]) -> Result<Self> {
        let model = Model::build(config)?;
        {
            let data = model.varmap.data().lock().expect("varmap lock");
            if data.len() != tensors.len() {
                return Err(Error::Integrity(format!(
                    "expected {} tensors, found {}",
                    data.len(),
                    tensors.len()
                )));
            }
            for (name, t) in tensors {
                let var = data
                    .get(name)
                    .ok_or_else(|| Error::Integrity(format!("unexpected tensor {name}")))?;
                if var.shape() != t.shape() {
                    return Err(Error::Integrity(format!(
                        "tensor {name} has shape {:?}, expected {:?}",
                        t.shape(),
                        var.shape()
                    )));
                }
                var.set(t)?;
            }
        }
        Ok(model)
    }

    fn init_random(&self, seed: u64) -> Result<()> {
        let data = self.varmap.data().lock().expect("varmap lock");
        let mut names: Vec<&String> = data.keys().collect();
        names.sort();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for name in names {
            let var = &data[name];
            let shape = var.shape().clone();
            let n = shape.elem_count();
            let values: Vec<f32> = if name.ends_with("running_var") {
                vec![1.0; n]
            } else if name.ends_with("running_mean") || name.ends_with("bias") {
                vec![0.0; n]
            } else if shape.rank() == 1 {
                vec![1.0; n]
            } else {
                let fan_in = n / shape.dims()[0];
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("valid std");
                (0..n).map(|_| normal.sample(&mut rng) as f32).collect()
            };
            var.set(&Tensor::from_vec(values, shape, &Device::Cpu)?)?;
        }
        Ok(())
    }

    fn load_weights_file(&self, path: &Path) -> Result<()> {
        if !path.is_file() {
            return Err(Error::Resource(format!("weights file {} not found", path.display())));
        }
        let tensors = candle_core::safetensors::load(path, &Device::Cpu)
            .map_err(|e| Error::Resource(format!("cannot read weights {}: {e}", path.display())))?;
        let data = self.varmap.data().lock().expect("varmap lock");
        let mut names: Vec<&String> = data.keys().collect();
        names.sort();
        for name in names {
            let key = name.strip_prefix("toy.").unwrap_or(name);
            match tensors.get(name.as_str()).or_else(|| tensors.get(key)) {
                Some(t) => {
                    let var = &data[name];
                    if t.shape() != var.shape() {
                        return Err(Error::Resource(format!(
                            "weights {} give {name} shape {:?}, expected {:?}",
                            path.display(),
                            t.shape(),
                            var.shape()
                        )));
                    }
                    var.set(&t.to_dtype(DType::F32)?)?;
                }
                None if name.starts_with("head.") => {}
                None => {
                    return Err(Error::Resource(format!(
                        "weights {} lack parameter {name}",
                        path.display()
                    )))
                }
            }
        }
        Ok(())
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn preprocessing(&self) -> &Preprocessing {
        &self.config.preprocessing
    }

    pub fn feature_dim(&self) -> usize {
        self.config.backbone.feature_dim()
    }

    pub fn projection_dim(&self) -> usize {
        self.config.head.output_dim
    }

    /// Trainable parameters sorted by name (batch-norm running statistics
    /// excluded).
    pub fn parameters(&self) -> Vec<(String, Var)> {
        self.all_vars()
            .into_iter()
            .filter(|(name, _)| !is_running_stat(name))
            .collect()
    }

    fn all_vars(&self) -> Vec<(String, Var)> {
        let data = self.varmap.data().lock().expect("varmap lock");
        let mut vars: Vec<(String, Var)> = data.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        vars.sort_by(|a, b| a.0.cmp(&b.0));
        vars
    }

    /// Every stored tensor (parameters and running statistics), by name.
    pub fn state(&self) -> Vec<(String, Tensor)> {
        self.all_vars()
            .into_iter()
            .map(|(name, var)| (name, var.as_tensor().copy().expect("cpu copy")))
            .collect()
    }

    /// Overwrites stored tensors; used to restore a snapshot from [`Model::state`].
    pub fn restore(&self, state: &[(String, Tensor)]) -> Result<()> {
        let data = self.varmap.data().lock().expect("varmap lock");
        for (name, t) in state {
            data.get(name)
                .ok_or_else(|| Error::Integrity(format!("unknown tensor {name}")))?
                .set(t)?;
        }
        drop(data);
        self.invalidate_fingerprint();
        Ok(())
    }

    pub(crate) fn invalidate_fingerprint(&self) {
        *self.fingerprint.lock().expect("fingerprint lock") = None;
    }

    /// Raw backbone features and raw projections, both un-normalized.
    pub fn forward(&self, x: &Tensor, train: bool) -> Result<(Tensor, Tensor)> {
        let feats = self.backbone.forward_t(x, train)?;
        let proj = self.head.forward(&feats)?;
        Ok((feats, proj))
    }

    pub fn batch_tensor(&self, images: &[&PreprocessedImage]) -> Result<Tensor> {
        let size = self.config.preprocessing.size;
        let mut flat = Vec::with_capacity(images.len() * 3 * size * size);
        for img in images {
            if img.size != size || img.data.len() != 3 * size * size {
                return Err(Error::Shape(format!(
                    "expected 3x{size}x{size} input, got 3x{0}x{0}",
                    img.size
                )));
            }
            flat.extend_from_slice(&img.data);
        }
        Ok(Tensor::from_vec(flat, (images.len(), 3, size, size), &Device::Cpu)?)
    }

    /// Inference-mode embeddings at `probe`, one unit vector per image.
    pub fn embed(&self, images: &[PreprocessedImage], probe: ProbePoint) -> Result<Vec<EmbeddingVector>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(EMBED_CHUNK) {
            let refs: Vec<&PreprocessedImage> = chunk.iter().collect();
            let x = self.batch_tensor(&refs)?;
            let feats = self.backbone.forward_t(&x, false)?;
            let rows = match probe {
                ProbePoint::EncoderOutput => finite_rows(&feats, "encoder")?,
                ProbePoint::ProjectionOutput => {
                    finite_rows(&feats, "encoder")?;
                    finite_rows(&self.head.forward(&feats)?, "projection head")?
                }
            };
            for row in rows {
                out.push(EmbeddingVector::normalize(row, probe)?);
            }
        }
        Ok(out)
    }
}

fn finite_rows(t: &Tensor, layer: &str) -> Result<Vec<Vec<f32>>> {
    let rows = t.to_vec2::<f32>()?;
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { layer: layer.into() });
    }
    Ok(rows)
}

impl ImageEmbedder for Model {
    fn fingerprint(&self) -> String {
        let mut cached = self.fingerprint.lock().expect("fingerprint lock");
        if let Some(fp) = cached.as_ref() {
            return fp.clone();
        }
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_vec(&self.config).expect("config serializes"));
        for (name, t) in self.state() {
            hasher.update(name.as_bytes());
            for d in t.dims() {
                hasher.update((*d as u64).to_le_bytes());
            }
            let values = t.flatten_all().and_then(|t| t.to_vec1::<f32>()).expect("f32 tensor");
            for v in values {
                hasher.update(v.to_le_bytes());
            }
        }
        let fp = hex::encode(&hasher.finalize()[..16]);
        *cached = Some(fp.clone());
        fp
    }

    fn probe_dim(&self, probe: ProbePoint) -> Option<usize> {
        Some(match probe {
            ProbePoint::EncoderOutput => self.feature_dim(),
            ProbePoint::ProjectionOutput => self.projection_dim(),
        })
    }

    fn embed_paths(&self, paths: &[PathBuf], probe: ProbePoint) -> Result<Vec<EmbeddingVector>> {
        let images = paths
            .iter()
            .map(|p| self.config.preprocessing.load(p))
            .collect::<Result<Vec<_>>>()?;
        self.embed(&images, probe)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    ReferenceCnn,
    ToyCnn,
    External,
}

/// Everything needed to construct an encoder handle.
pub enum EncoderSpec {
    ReferenceCnn {
        head: HeadVariant,
        weights: WeightsSource,
    },
    ToyCnn {
        dim: usize,
        input_size: usize,
        head: HeadVariant,
        seed: u64,
    },
    External {
        provider: Box<dyn EmbeddingProvider>,
        dim: usize,
    },
}

impl EncoderSpec {
    pub fn kind(&self) -> EncoderKind {
        match self {
            EncoderSpec::ReferenceCnn { .. } => EncoderKind::ReferenceCnn,
            EncoderSpec::ToyCnn { .. } => EncoderKind::ToyCnn,
            EncoderSpec::External { .. } => EncoderKind::External,
        }
    }
}

pub enum EncoderHandle {
    Trainable(Model),
    External(ExternalEncoder),
}

impl EncoderHandle {
    pub fn kind(&self) -> EncoderKind {
        match self {
            EncoderHandle::Trainable(m) => match m.config().backbone {
                BackboneConfig::ReferenceCnn => EncoderKind::ReferenceCnn,
                BackboneConfig::ToyCnn { .. } => EncoderKind::ToyCnn,
            },
            EncoderHandle::External(_) => EncoderKind::External,
        }
    }

    pub fn as_model(&self) -> Option<&Model> {
        match self {
            EncoderHandle::Trainable(m) => Some(m),
            EncoderHandle::External(_) => None,
        }
    }

    pub fn into_model(self) -> Option<Model> {
        match self {
            EncoderHandle::Trainable(m) => Some(m),
            EncoderHandle::External(_) => None,
        }
    }

    fn inner(&self) -> &dyn ImageEmbedder {
        match self {
            EncoderHandle::Trainable(m) => m,
            EncoderHandle::External(e) => e,
        }
    }
}

impl ImageEmbedder for EncoderHandle {
    fn fingerprint(&self) -> String {
        self.inner().fingerprint()
    }

    fn probe_dim(&self, probe: ProbePoint) -> Option<usize> {
        self.inner().probe_dim(probe)
    }

    fn embed_paths(&self, paths: &[PathBuf], probe: ProbePoint) -> Result<Vec<EmbeddingVector>> {
        self.inner().embed_paths(paths, probe)
    }
}

pub fn make_encoder(spec: EncoderSpec) -> Result<EncoderHandle> {
    Ok(match spec {
        EncoderSpec::ReferenceCnn { head, weights } => {
            EncoderHandle::Trainable(Model::new(ModelConfig::reference(head), &weights)?)
        }
        EncoderSpec::ToyCnn {
            dim,
            input_size,
            head,
            seed,
        } => EncoderHandle::Trainable(Model::new(
            ModelConfig::toy(dim, input_size, head),
            &WeightsSource::Random { seed },
        )?),
        EncoderSpec::External { provider, dim } => EncoderHandle::External(ExternalEncoder::new(provider, dim)),
    })
}
