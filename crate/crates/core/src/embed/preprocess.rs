use std::path::Path;

use image::imageops::FilterType;
use image::DynamicImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

/// Resize-and-normalize contract applied to every image before encoding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub size: usize,
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for Preprocessing {
    fn default() -> Self {
        Preprocessing::imagenet(224)
    }
}

/// A `3 x size x size` channel-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessedImage {
    pub size: usize,
    pub data: Vec<f32>,
}

impl PreprocessedImage {
    pub fn shape(&self) -> (usize, usize, usize) {
        (3, self.size, self.size)
    }
}

impl Preprocessing {
    pub fn imagenet(size: usize) -> Self {
        Preprocessing {
            size,
            mean: IMAGENET_MEAN,
            std: IMAGENET_STD,
        }
    }

    pub fn apply(&self, image: &DynamicImage) -> PreprocessedImage {
        let rgb = image.to_rgb8();
        let s = self.size as u32;
        let rgb = if rgb.dimensions() == (s, s) {
            rgb
        } else {
            image::imageops::resize(&rgb, s, s, FilterType::Triangle)
        };
        let plane = self.size * self.size;
        let mut data = vec![0f32; 3 * plane];
        for (i, px) in rgb.pixels().enumerate() {
            for c in 0..3 {
                data[c * plane + i] = (px[c] as f32 / 255.0 - self.mean[c]) / self.std[c];
            }
        }
        PreprocessedImage {
            size: self.size,
            data,
        }
    }

    pub fn load(&self, path: &Path) -> Result<PreprocessedImage> {
        Ok(self.apply(&decode(path)?))
    }
}

pub fn decode(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}
