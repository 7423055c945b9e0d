//! Region-wise infringement check.
//!
//! A generated image `y` infringes an original `x` when some transform `t`
//! and some region `Ω` of significant size bring the two close in a chosen
//! representation:
//!
//! ```text
//! rms(A(y)_Ω − A(t(x))_Ω) < f(|Ω|) · δ
//! ```
//!
//! `A` is either the RGB raster in `[0, 1]` or a Sobel edge-magnitude map,
//! `t(x)` is resized to `y`'s dimensions before comparison, and
//! `f(a) = clamp(sqrt(a / |image|), 0.5, 1)`.

use std::fmt;
use std::path::Path;

use image::imageops::{self, FilterType};
use image::Rgb32FImage;
use serde::{Deserialize, Serialize};

use crate::embed::decode;
use crate::error::{Error, Result};

/// RGB image with channel values in `[0, 1]`.
pub type Raster = Rgb32FImage;

pub fn load_raster(path: &Path) -> Result<Raster> {
    Ok(decode(path)?.to_rgb32f())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Rotation {
    R0,
    R90,
    R180,
    R270,
}

impl Rotation {
    fn quarter_turns(self) -> u8 {
        match self {
            Rotation::R0 => 0,
            Rotation::R90 => 1,
            Rotation::R180 => 2,
            Rotation::R270 => 3,
        }
    }

    fn from_quarter_turns(q: u8) -> Self {
        match q % 4 {
            0 => Rotation::R0,
            1 => Rotation::R90,
            2 => Rotation::R180,
            _ => Rotation::R270,
        }
    }
}

/// Element of the dihedral group of the square: an optional horizontal
/// flip followed by a clockwise rotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Transform {
    pub flip: bool,
    pub rotation: Rotation,
}

impl Transform {
    pub const IDENTITY: Transform = Transform { flip: false, rotation: Rotation::R0 };
    pub const HORIZONTAL_FLIP: Transform = Transform { flip: true, rotation: Rotation::R0 };

    pub fn rotation(rotation: Rotation) -> Self {
        Transform { flip: false, rotation }
    }

    pub fn all() -> Vec<Transform> {
        let mut out = Vec::with_capacity(8);
        for flip in [false, true] {
            for q in 0..4 {
                out.push(Transform { flip, rotation: Rotation::from_quarter_turns(q) });
            }
        }
        out
    }

    /// `self.then(other)` applies `self` first.
    pub fn then(self, other: Transform) -> Transform {
        // R·F = F·R⁻¹, so moving other's flip left past our rotation inverts it.
        let q = if other.flip {
            (4 - self.rotation.quarter_turns()) % 4 + other.rotation.quarter_turns()
        } else {
            self.rotation.quarter_turns() + other.rotation.quarter_turns()
        };
        Transform {
            flip: self.flip ^ other.flip,
            rotation: Rotation::from_quarter_turns(q),
        }
    }

    pub fn inverse(self) -> Transform {
        if self.flip {
            self
        } else {
            Transform::rotation(Rotation::from_quarter_turns(4 - self.rotation.quarter_turns()))
        }
    }

    pub fn apply(self, img: &Raster) -> Raster {
        let flipped;
        let src = if self.flip {
            flipped = imageops::flip_horizontal(img);
            &flipped
        } else {
            img
        };
        match self.rotation {
            Rotation::R0 => src.clone(),
            Rotation::R90 => imageops::rotate90(src),
            Rotation::R180 => imageops::rotate180(src),
            Rotation::R270 => imageops::rotate270(src),
        }
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let deg = 90 * self.rotation.quarter_turns() as u32;
        match (self.flip, deg) {
            (false, 0) => write!(f, "identity"),
            (true, 0) => write!(f, "horizontal_flip"),
            (false, d) => write!(f, "rotate{d}"),
            (true, d) => write!(f, "horizontal_flip+rotate{d}"),
        }
    }
}

impl std::str::FromStr for Transform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Transform::all()
            .into_iter()
            .find(|t| t.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown transform `{s}`")))
    }
}

/// Resizes `img` to `width × height` unless it already matches.
pub fn resize_to(img: &Raster, width: u32, height: u32) -> Raster {
    if img.dimensions() == (width, height) {
        img.clone()
    } else {
        imageops::resize(img, width, height, FilterType::Triangle)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepresentationDomain {
    Pixel,
    Edge,
}

impl std::str::FromStr for RepresentationDomain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pixel" => Ok(RepresentationDomain::Pixel),
            "edge" => Ok(RepresentationDomain::Edge),
            _ => Err(Error::Config(format!("unknown domain `{s}` (expected pixel or edge)"))),
        }
    }
}

impl fmt::Display for RepresentationDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            RepresentationDomain::Pixel => "pixel",
            RepresentationDomain::Edge => "edge",
        })
    }
}

/// Planar feature map: `channels` planes of `width × height`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub width: u32,
    pub height: u32,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn at(&self, c: usize, x: u32, y: u32) -> f32 {
        self.data[(c * self.height as usize + y as usize) * self.width as usize + x as usize]
    }
}

pub fn represent(img: &Raster, domain: RepresentationDomain) -> FeatureMap {
    let (w, h) = img.dimensions();
    match domain {
        RepresentationDomain::Pixel => {
            let plane = (w * h) as usize;
            let mut data = vec![0f32; 3 * plane];
            for (i, p) in img.pixels().enumerate() {
                for c in 0..3 {
                    data[c * plane + i] = p[c];
                }
            }
            FeatureMap { width: w, height: h, channels: 3, data }
        }
        RepresentationDomain::Edge => {
            let luma: Vec<f32> = img
                .pixels()
                .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
                .collect();
            let at = |x: i64, y: i64| {
                let x = x.clamp(0, w as i64 - 1) as usize;
                let y = y.clamp(0, h as i64 - 1) as usize;
                luma[y * w as usize + x]
            };
            let mut data = Vec::with_capacity((w * h) as usize);
            for y in 0..h as i64 {
                for x in 0..w as i64 {
                    let gx = at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1)
                        - at(x - 1, y - 1)
                        - 2.0 * at(x - 1, y)
                        - at(x - 1, y + 1);
                    let gy = at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1)
                        - at(x - 1, y - 1)
                        - 2.0 * at(x, y - 1)
                        - at(x + 1, y - 1);
                    data.push((gx * gx + gy * gy).sqrt());
                }
            }
            // Peak-normalised so delta means the same fraction of range as in
            // pixel space; a flat image stays all zero.
            let peak = data.iter().copied().fold(0f32, f32::max);
            if peak > 0.0 {
                data.iter_mut().for_each(|v| *v /= peak);
            }
            FeatureMap { width: w, height: h, channels: 1, data }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl Region {
    pub fn full(width: u32, height: u32) -> Self {
        Region { x: 0, y: 0, width, height }
    }

    pub fn area(&self) -> u64 {
        self.width as u64 * self.height as u64
    }

    pub fn check_bounds(&self, width: u32, height: u32) -> Result<()> {
        let fits = self.width > 0
            && self.height > 0
            && self.x as u64 + self.width as u64 <= width as u64
            && self.y as u64 + self.height as u64 <= height as u64;
        if fits {
            Ok(())
        } else {
            Err(Error::RegionOutOfBounds(format!(
                "{}x{}+{}+{} in a {width}x{height} image",
                self.width, self.height, self.x, self.y
            )))
        }
    }
}

/// Size adjustment `f(|Ω|)`: monotone in `area`, `0.5` for regions up to a
/// quarter of the image, `1` for the whole image.
pub fn size_adjust(area: u64, image_area: u64) -> f64 {
    (area as f64 / image_area as f64).sqrt().clamp(0.5, 1.0)
}

pub const GRID_FRACTIONS: [(u32, u32); 3] = [(1, 4), (1, 2), (1, 1)];

fn axis_positions(extent: u32, size: u32) -> Vec<u32> {
    let stride = (size / 2).max(1);
    let mut out: Vec<u32> = (0..=extent - size).step_by(stride as usize).collect();
    if *out.last().expect("non-empty") != extent - size {
        out.push(extent - size);
    }
    out
}

/// Sliding-window search grid: window sides at 1/4, 1/2 and 1 of each
/// dimension, 50% stride, with a final window flush against the far edge.
/// Windows below `min_region_fraction` of the image are skipped. Order is
/// height fraction, width fraction, then row-major position.
pub fn search_grid(width: u32, height: u32, min_region_fraction: f64) -> Vec<Region> {
    let total = width as f64 * height as f64;
    let side = |extent: u32, (n, d): (u32, u32)| ((extent as f64 * n as f64 / d as f64).round() as u32).clamp(1, extent);
    let mut out = Vec::new();
    for fh in GRID_FRACTIONS {
        let rh = side(height, fh);
        for fw in GRID_FRACTIONS {
            let rw = side(width, fw);
            if (rw as f64 * rh as f64) < min_region_fraction * total - 1e-9 {
                continue;
            }
            for &y in &axis_positions(height, rh) {
                for &x in &axis_positions(width, rw) {
                    out.push(Region { x, y, width: rw, height: rh });
                }
            }
        }
    }
    out
}

fn check_degenerate(region: &Region, domain: RepresentationDomain) -> Result<()> {
    if domain == RepresentationDomain::Edge && (region.width < 2 || region.height < 2) {
        return Err(Error::DegenerateRegion(format!(
            "edge representation needs a region of at least 2x2, got {}x{}",
            region.width, region.height
        )));
    }
    Ok(())
}

/// RMS distance between `A(y)` and `A(t(x̂))` over `region`, averaged over
/// channels as well as pixels.
pub fn region_distance(
    y: &Raster,
    x_hat: &Raster,
    t: Transform,
    region: &Region,
    domain: RepresentationDomain,
) -> Result<f64> {
    let (w, h) = y.dimensions();
    region.check_bounds(w, h)?;
    check_degenerate(region, domain)?;
    let a = represent(y, domain);
    let b = represent(&resize_to(&t.apply(x_hat), w, h), domain);
    let mut sum = 0f64;
    for c in 0..a.channels {
        for yy in region.y..region.y + region.height {
            for xx in region.x..region.x + region.width {
                let d = (a.at(c, xx, yy) - b.at(c, xx, yy)) as f64;
                sum += d * d;
            }
        }
    }
    Ok((sum / (a.channels as f64 * region.area() as f64)).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionConfig {
    pub delta: f64,
    pub min_region_fraction: f64,
    pub domain: RepresentationDomain,
    pub transforms: Vec<Transform>,
}

impl Default for CriterionConfig {
    fn default() -> Self {
        CriterionConfig {
            delta: 0.1,
            min_region_fraction: 1.0 / 16.0,
            domain: RepresentationDomain::Pixel,
            transforms: Transform::all(),
        }
    }
}

impl CriterionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.transforms.is_empty() {
            return Err(Error::Config("transform set is empty".into()));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::Config(format!("delta must be positive, got {}", self.delta)));
        }
        if !(0.0..=1.0).contains(&self.min_region_fraction) {
            return Err(Error::Config(format!(
                "min_region_fraction must lie in [0, 1], got {}",
                self.min_region_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDistance {
    pub transform: Transform,
    pub region: Region,
    pub distance: f64,
    pub threshold: f64,
}

impl GridDistance {
    pub fn ratio(&self) -> f64 {
        self.distance / self.threshold
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionReport {
    pub infringing: bool,
    pub domain: RepresentationDomain,
    /// Satisfying candidate with the smallest distance-to-threshold ratio.
    pub witness: Option<GridDistance>,
    /// Candidate with the smallest ratio, satisfying or not.
    pub closest: Option<GridDistance>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<GridDistance>>,
}

/// Per-pixel squared differences summed over channels, as a summed-area table
/// with a zero first row and column.
struct SquaredDiffTable {
    width: usize,
    sums: Vec<f64>,
}

impl SquaredDiffTable {
    fn new(a: &FeatureMap, b: &FeatureMap) -> Self {
        let (w, h) = (a.width as usize, a.height as usize);
        let mut sums = vec![0f64; (w + 1) * (h + 1)];
        for y in 0..h {
            let mut row = 0f64;
            for x in 0..w {
                for c in 0..a.channels {
                    let d = (a.at(c, x as u32, y as u32) - b.at(c, x as u32, y as u32)) as f64;
                    row += d * d;
                }
                sums[(y + 1) * (w + 1) + x + 1] = sums[y * (w + 1) + x + 1] + row;
            }
        }
        SquaredDiffTable { width: w + 1, sums }
    }

    fn region_sum(&self, r: &Region) -> f64 {
        let (x0, y0) = (r.x as usize, r.y as usize);
        let (x1, y1) = (x0 + r.width as usize, y0 + r.height as usize);
        let s = |x: usize, y: usize| self.sums[y * self.width + x];
        (s(x1, y1) - s(x0, y1) - s(x1, y0) + s(x0, y0)).max(0.0)
    }
}

pub fn check_infringement(y: &Raster, x_hat: &Raster, config: &CriterionConfig) -> Result<CriterionReport> {
    check_infringement_with(y, x_hat, config, false)
}

/// As [`check_infringement`], optionally returning every grid distance.
pub fn check_infringement_with(
    y: &Raster,
    x_hat: &Raster,
    config: &CriterionConfig,
    record_grid: bool,
) -> Result<CriterionReport> {
    config.validate()?;
    let (w, h) = y.dimensions();
    let image_area = w as u64 * h as u64;
    let grid = search_grid(w, h, config.min_region_fraction);
    let a = represent(y, config.domain);

    let mut witness: Option<GridDistance> = None;
    let mut closest: Option<GridDistance> = None;
    let mut all = Vec::new();
    for &t in &config.transforms {
        let b = represent(&resize_to(&t.apply(x_hat), w, h), config.domain);
        let table = SquaredDiffTable::new(&a, &b);
        for region in &grid {
            check_degenerate(region, config.domain)?;
            let distance = (table.region_sum(region) / (a.channels as f64 * region.area() as f64)).sqrt();
            let cand = GridDistance {
                transform: t,
                region: *region,
                distance,
                threshold: size_adjust(region.area(), image_area) * config.delta,
            };
            if closest.as_ref().is_none_or(|c| cand.ratio() < c.ratio()) {
                closest = Some(cand.clone());
            }
            if cand.distance < cand.threshold && witness.as_ref().is_none_or(|c| cand.ratio() < c.ratio()) {
                witness = Some(cand.clone());
            }
            if record_grid {
                all.push(cand);
            }
        }
    }
    Ok(CriterionReport {
        infringing: witness.is_some(),
        domain: config.domain,
        witness,
        closest,
        grid: record_grid.then_some(all),
    })
}
