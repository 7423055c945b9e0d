//! Deterministic synthetic forgery corpus.
//!
//! Originals are procedural textures (layered sinusoids plus a few seeded
//! shapes, rendered through a per-anchor colour palette). Forgeries emulate
//! the four attack kinds structurally:
//!
//! * inpainting: a 10-30% rectangle is replaced by an unrelated texture;
//! * style transfer: the luminance field is re-rendered through a new palette;
//! * adversarial: additive noise of at most 2/255 per channel;
//! * cutmix: a 25-50% rectangle is copied from another anchor's original.
//!
//! Dissimilar pairs match an original with a fresh, unrelated texture.
//!
//! Output layout under `out_dir`:
//!
//! ```text
//! manifest.jsonl
//! originals/a00000.png
//! forgeries/a00000_inpainting_0.png
//! distractors/d00000.png
//! ```

use std::collections::BTreeMap;
use std::f32::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{write_manifest, AttackType, Label, PairRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_anchors: usize,
    pub forgeries_per_anchor: BTreeMap<AttackType, usize>,
    /// Cap on forgeries per anchor. The attack list is then walked
    /// cyclically from an anchor-dependent offset, so attack kinds stay
    /// balanced across the corpus.
    pub per_anchor_limit: Option<usize>,
    pub image_size: u32,
    pub n_dissimilar: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_anchors: 10,
            forgeries_per_anchor: AttackType::FORGERIES.iter().map(|&a| (a, 1)).collect(),
            per_anchor_limit: None,
            image_size: 64,
            n_dissimilar: 10,
            seed: 0,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.forgeries_per_anchor.contains_key(&AttackType::None) {
            return Err(Error::Config("`none` is not a forgery kind".into()));
        }
        if self.image_size < 8 {
            return Err(Error::Config(format!(
                "image_size must be at least 8, got {}",
                self.image_size
            )));
        }
        Ok(())
    }

    /// Attack kinds for anchor `index`, in generation order.
    pub fn attacks_for(&self, index: usize) -> Vec<AttackType> {
        let full: Vec<AttackType> = self
            .forgeries_per_anchor
            .iter()
            .flat_map(|(&a, &n)| std::iter::repeat_n(a, n))
            .collect();
        match self.per_anchor_limit {
            Some(limit) if limit < full.len() => (0..limit)
                .map(|k| full[(index + k) % full.len()])
                .collect(),
            _ => full,
        }
    }
}

// Stream ids keep the random draws for each role independent.
const STREAM_ANCHOR: u64 = 1 << 40;
const STREAM_FORGERY: u64 = 2 << 40;
const STREAM_DISTRACTOR: u64 = 3 << 40;
const STREAM_PALETTE: u64 = 4 << 40;

/// Palettes are shared across the corpus so colour alone never identifies
/// an artwork; identity lives in the structure.
const PALETTE_BANK: usize = 6;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

struct Wave {
    fx: f32,
    fy: f32,
    phase: f32,
    amp: f32,
}

enum Shape {
    Disc { cx: f32, cy: f32, r: f32, v: f32 },
    Rect { x0: f32, y0: f32, x1: f32, y1: f32, v: f32 },
}

/// Scalar field in [0, 1] over the unit square.
struct Texture {
    waves: Vec<Wave>,
    shapes: Vec<Shape>,
}

type Palette = [[f32; 3]; 3];

impl Texture {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let waves = (0..3)
            .map(|_| {
                let freq = rng.random_range(1.0..6.0f32);
                let angle = rng.random_range(0.0..TAU);
                Wave {
                    fx: freq * angle.cos(),
                    fy: freq * angle.sin(),
                    phase: rng.random_range(0.0..TAU),
                    amp: rng.random_range(0.4..1.0),
                }
            })
            .collect();
        let n_shapes = rng.random_range(2..5);
        let shapes = (0..n_shapes)
            .map(|_| {
                let v = rng.random_range(-1.0..1.0f32);
                if rng.random_bool(0.5) {
                    Shape::Disc {
                        cx: rng.random_range(0.1..0.9),
                        cy: rng.random_range(0.1..0.9),
                        r: rng.random_range(0.08..0.25),
                        v,
                    }
                } else {
                    let (x0, y0) = (rng.random_range(0.0..0.7f32), rng.random_range(0.0..0.7f32));
                    Shape::Rect {
                        x0,
                        y0,
                        x1: x0 + rng.random_range(0.1..0.3),
                        y1: y0 + rng.random_range(0.1..0.3),
                        v,
                    }
                }
            })
            .collect();
        Texture { waves, shapes }
    }

    fn raw(&self, u: f32, v: f32) -> f32 {
        let mut s: f32 = self
            .waves
            .iter()
            .map(|w| w.amp * (TAU * (w.fx * u + w.fy * v) + w.phase).sin())
            .sum();
        for shape in &self.shapes {
            s += match *shape {
                Shape::Disc { cx, cy, r, v: val } => {
                    if (u - cx).powi(2) + (v - cy).powi(2) <= r * r {
                        val * 1.5
                    } else {
                        0.0
                    }
                }
                Shape::Rect { x0, y0, x1, y1, v: val } => {
                    if (x0..x1).contains(&u) && (y0..y1).contains(&v) {
                        val * 1.5
                    } else {
                        0.0
                    }
                }
            };
        }
        s
    }

    fn field(&self, size: u32) -> Vec<f32> {
        let n = size as f32;
        let raw: Vec<f32> = (0..size * size)
            .map(|i| self.raw((i % size) as f32 / n, (i / size) as f32 / n))
            .collect();
        normalize_unit(&raw)
    }
}

fn normalize_unit(values: &[f32]) -> Vec<f32> {
    let lo = values.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = values.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let span = (hi - lo).max(1e-6);
    values.iter().map(|v| (v - lo) / span).collect()
}

fn luma(c: &[f32; 3]) -> f32 {
    0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]
}

/// Three random colours ordered dark to light, so rendering keeps the
/// field's tonal ordering whatever the hues.
fn random_palette(rng: &mut ChaCha8Rng) -> Palette {
    let mut p = [[0f32; 3]; 3];
    for c in p.iter_mut() {
        for ch in c.iter_mut() {
            *ch = rng.random_range(0.0..1.0);
        }
    }
    p.sort_by(|a, b| luma(a).total_cmp(&luma(b)));
    p
}

fn shade(palette: &Palette, t: f32) -> Rgb<u8> {
    let (a, b, w) = if t < 0.5 {
        (palette[0], palette[1], t * 2.0)
    } else {
        (palette[1], palette[2], (t - 0.5) * 2.0)
    };
    Rgb(std::array::from_fn(|c| {
        ((a[c] + (b[c] - a[c]) * w) * 255.0).round().clamp(0.0, 255.0) as u8
    }))
}

fn render(field: &[f32], size: u32, palette: &Palette) -> RgbImage {
    RgbImage::from_fn(size, size, |x, y| shade(palette, field[(y * size + x) as usize]))
}

fn palette_bank(seed: u64) -> Vec<Palette> {
    let mut rng = rng_for(seed, STREAM_PALETTE);
    (0..PALETTE_BANK).map(|_| random_palette(&mut rng)).collect()
}

fn pick<'a>(bank: &'a [Palette], rng: &mut ChaCha8Rng) -> &'a Palette {
    &bank[rng.random_range(0..bank.len())]
}

fn random_texture_image(rng: &mut ChaCha8Rng, size: u32, bank: &[Palette]) -> RgbImage {
    let tex = Texture::random(rng);
    render(&tex.field(size), size, pick(bank, rng))
}

/// Axis-aligned rectangle covering a fraction of the image in `[lo, hi)`.
fn random_rect(rng: &mut ChaCha8Rng, size: u32, lo: f32, hi: f32) -> (u32, u32, u32, u32) {
    let area = rng.random_range(lo..hi) * (size * size) as f32;
    let aspect = rng.random_range(0.6..1.6f32);
    let w = ((area * aspect).sqrt().round() as u32).clamp(1, size);
    let h = ((area / w as f32).round() as u32).clamp(1, size);
    let x = rng.random_range(0..=size - w);
    let y = rng.random_range(0..=size - h);
    (x, y, w, h)
}

fn paste(dst: &mut RgbImage, src: &RgbImage, (x, y, w, h): (u32, u32, u32, u32)) {
    for yy in y..y + h {
        for xx in x..x + w {
            dst.put_pixel(xx, yy, *src.get_pixel(xx, yy));
        }
    }
}

fn inpaint(original: &RgbImage, rng: &mut ChaCha8Rng, bank: &[Palette]) -> RgbImage {
    let size = original.width();
    let rect = random_rect(rng, size, 0.10, 0.30);
    let filler = random_texture_image(rng, size, bank);
    let mut out = original.clone();
    paste(&mut out, &filler, rect);
    out
}

fn style_transfer(original: &RgbImage, rng: &mut ChaCha8Rng, bank: &[Palette]) -> RgbImage {
    let size = original.width();
    let tone: Vec<f32> = original
        .pixels()
        .map(|p| luma(&[p[0] as f32, p[1] as f32, p[2] as f32]))
        .collect();
    render(&normalize_unit(&tone), size, pick(bank, rng))
}

fn adversarial(original: &RgbImage, rng: &mut ChaCha8Rng) -> RgbImage {
    let mut out = original.clone();
    for p in out.pixels_mut() {
        for ch in p.0.iter_mut() {
            let delta: i16 = rng.random_range(-2..=2);
            *ch = (*ch as i16 + delta).clamp(0, 255) as u8;
        }
    }
    out
}

fn cutmix(original: &RgbImage, donor: &RgbImage, rng: &mut ChaCha8Rng) -> RgbImage {
    let rect = random_rect(rng, original.width(), 0.25, 0.50);
    let mut out = original.clone();
    paste(&mut out, donor, rect);
    out
}

fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::Io(io),
        other => Error::Resource(format!("cannot write {}: {other}", path.display())),
    })
}

/// Writes the corpus and its manifest; returns the manifest path.
pub fn generate(config: &SynthConfig, out_dir: &Path) -> Result<PathBuf> {
    config.validate()?;
    let size = config.image_size;
    let bank = palette_bank(config.seed);
    for sub in ["originals", "forgeries", "distractors"] {
        fs::create_dir_all(out_dir.join(sub))?;
    }

    let originals: Vec<RgbImage> = (0..config.n_anchors)
        .map(|a| {
            let mut rng = rng_for(config.seed, STREAM_ANCHOR + a as u64);
            random_texture_image(&mut rng, size, &bank)
        })
        .collect();
    let original_paths: Vec<PathBuf> = (0..config.n_anchors)
        .map(|a| out_dir.join("originals").join(format!("a{a:05}.png")))
        .collect();
    for (img, path) in originals.iter().zip(&original_paths) {
        save_png(img, path)?;
    }

    let mut records = Vec::new();
    for (a, original) in originals.iter().enumerate() {
        let mut rng = rng_for(config.seed, STREAM_FORGERY + a as u64);
        let mut per_kind: BTreeMap<AttackType, usize> = BTreeMap::new();
        for attack in config.attacks_for(a) {
            let k = per_kind.entry(attack).or_insert(0);
            let forged = match attack {
                AttackType::Inpainting => inpaint(original, &mut rng, &bank),
                AttackType::StyleTransfer => style_transfer(original, &mut rng, &bank),
                AttackType::Adversarial => adversarial(original, &mut rng),
                AttackType::Cutmix => {
                    if config.n_anchors > 1 {
                        let other = (a + rng.random_range(1..config.n_anchors)) % config.n_anchors;
                        cutmix(original, &originals[other], &mut rng)
                    } else {
                        let donor = random_texture_image(&mut rng, size, &bank);
                        cutmix(original, &donor, &mut rng)
                    }
                }
                AttackType::None => unreachable!("validated above"),
            };
            let path = out_dir
                .join("forgeries")
                .join(format!("a{a:05}_{}_{k}.png", attack.as_str()));
            save_png(&forged, &path)?;
            records.push(PairRecord {
                pair_id: format!("s{a:05}_{}_{k}", attack.as_str()),
                original_path: original_paths[a].clone(),
                candidate_path: path,
                label: Label::Similar,
                attack,
                anchor_id: format!("a{a:05}"),
            });
            *k += 1;
        }
    }

    let distractor = |k: usize| -> Result<PathBuf> {
        let mut rng = rng_for(config.seed, STREAM_DISTRACTOR + k as u64);
        let path = out_dir.join("distractors").join(format!("d{k:05}.png"));
        save_png(&random_texture_image(&mut rng, size, &bank), &path)?;
        Ok(path)
    };
    for k in 0..config.n_dissimilar {
        let (original_path, candidate_path, anchor_id) = if config.n_anchors > 0 {
            let a = k % config.n_anchors;
            (original_paths[a].clone(), distractor(k)?, format!("a{a:05}"))
        } else {
            (distractor(2 * k)?, distractor(2 * k + 1)?, format!("d{k:05}"))
        };
        records.push(PairRecord {
            pair_id: format!("d{k:05}"),
            original_path,
            candidate_path,
            label: Label::Dissimilar,
            attack: AttackType::None,
            anchor_id,
        });
    }

    let manifest = out_dir.join("manifest.jsonl");
    write_manifest(&manifest, &records)?;
    Ok(manifest)
}
