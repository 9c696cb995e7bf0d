//! Test-time corruptions with five severity levels each.
//!
//! Severity tables (index = severity - 1):
//!
//! | kind             | parameter                         | 1     | 2     | 3     | 4     | 5     |
//! |------------------|-----------------------------------|-------|-------|-------|-------|-------|
//! | `gaussian_noise` | noise std                         | 0.04  | 0.08  | 0.12  | 0.18  | 0.26  |
//! | `shot_noise`     | photons per unit intensity        | 60    | 25    | 12    | 5     | 3     |
//! | `impulse_noise`  | salt-and-pepper fraction          | 0.03  | 0.06  | 0.09  | 0.17  | 0.27  |
//! | `box_blur`       | (radius, passes)                  | (1,1) | (1,2) | (2,1) | (2,2) | (3,2) |
//! | `contrast`       | contrast factor                   | 0.75  | 0.5   | 0.4   | 0.3   | 0.15  |
//! | `brightness`     | additive offset                   | 0.1   | 0.2   | 0.3   | 0.4   | 0.5   |
//! | `pixelate`       | (block, blend)                    | (2,.5)| (2,1) | (3,1) | (4,.75)| (4,1)|
//!
//! Every output is clipped to `[0, 1]`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::batch::ImageBatch;
use crate::error::{Result, WattError};
use crate::seed::rng;

pub const GAUSSIAN_SIGMA: [f64; 5] = [0.04, 0.08, 0.12, 0.18, 0.26];
pub const SHOT_PHOTONS: [f64; 5] = [60.0, 25.0, 12.0, 5.0, 3.0];
pub const IMPULSE_AMOUNT: [f64; 5] = [0.03, 0.06, 0.09, 0.17, 0.27];
pub const BLUR_RADIUS_PASSES: [(usize, usize); 5] = [(1, 1), (1, 2), (2, 1), (2, 2), (3, 2)];
pub const CONTRAST_FACTOR: [f64; 5] = [0.75, 0.5, 0.4, 0.3, 0.15];
pub const BRIGHTNESS_DELTA: [f64; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];
pub const PIXELATE_BLOCK_BLEND: [(usize, f64); 5] = [(2, 0.5), (2, 1.0), (3, 1.0), (4, 0.75), (4, 1.0)];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    GaussianNoise,
    ShotNoise,
    ImpulseNoise,
    BoxBlur,
    Contrast,
    Brightness,
    Pixelate,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 7] = [
        CorruptionKind::GaussianNoise,
        CorruptionKind::ShotNoise,
        CorruptionKind::ImpulseNoise,
        CorruptionKind::BoxBlur,
        CorruptionKind::Contrast,
        CorruptionKind::Brightness,
        CorruptionKind::Pixelate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CorruptionKind::GaussianNoise => "gaussian_noise",
            CorruptionKind::ShotNoise => "shot_noise",
            CorruptionKind::ImpulseNoise => "impulse_noise",
            CorruptionKind::BoxBlur => "box_blur",
            CorruptionKind::Contrast => "contrast",
            CorruptionKind::Brightness => "brightness",
            CorruptionKind::Pixelate => "pixelate",
        }
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CorruptionKind {
    type Err = WattError;

    fn from_str(s: &str) -> Result<Self> {
        CorruptionKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| WattError::invalid(format!("unknown corruption kind `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Corruption {
    pub kind: CorruptionKind,
    pub severity: u8,
}

impl Corruption {
    pub fn new(kind: CorruptionKind, severity: u8) -> Result<Self> {
        if !(1..=5).contains(&severity) {
            return Err(WattError::invalid(format!(
                "corruption severity must be 1..=5, got {severity}"
            )));
        }
        Ok(Corruption { kind, severity })
    }

    fn level(&self) -> usize {
        usize::from(self.severity) - 1
    }

    pub fn id(&self) -> String {
        format!("{}-{}", self.kind, self.severity)
    }
}

/// Corrupted copy of `images`; deterministic given `seed`.
pub fn apply_corruption(images: &ImageBatch, c: Corruption, seed: u64) -> Result<ImageBatch> {
    let c = Corruption::new(c.kind, c.severity)?;
    let mut r = rng(seed);
    let lvl = c.level();
    let out = match c.kind {
        CorruptionKind::GaussianNoise => gaussian_noise(images, GAUSSIAN_SIGMA[lvl], &mut r),
        CorruptionKind::ShotNoise => shot_noise(images, SHOT_PHOTONS[lvl], &mut r),
        CorruptionKind::ImpulseNoise => impulse_noise(images, IMPULSE_AMOUNT[lvl], &mut r),
        CorruptionKind::BoxBlur => {
            let (radius, passes) = BLUR_RADIUS_PASSES[lvl];
            box_blur(images, radius, passes)
        }
        CorruptionKind::Contrast => contrast(images, CONTRAST_FACTOR[lvl]),
        CorruptionKind::Brightness => brightness(images, BRIGHTNESS_DELTA[lvl]),
        CorruptionKind::Pixelate => {
            let (block, blend) = PIXELATE_BLOCK_BLEND[lvl];
            pixelate(images, block, blend)
        }
    };
    images.with_pixels(out)
}

fn clip(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

pub fn gaussian_noise(images: &ImageBatch, sigma: f64, r: &mut impl Rng) -> Vec<f64> {
    let n = Normal::new(0.0, sigma).expect("finite sigma");
    images.pixels().iter().map(|&p| clip(p + n.sample(r))).collect()
}

pub fn shot_noise(images: &ImageBatch, photons: f64, r: &mut impl Rng) -> Vec<f64> {
    images
        .pixels()
        .iter()
        .map(|&p| {
            let lambda = p * photons;
            if lambda <= 0.0 {
                return 0.0;
            }
            let count: f64 = Poisson::new(lambda).expect("positive rate").sample(r);
            clip(count / photons)
        })
        .collect()
}

pub fn impulse_noise(images: &ImageBatch, amount: f64, r: &mut impl Rng) -> Vec<f64> {
    images
        .pixels()
        .iter()
        .map(|&p| {
            if r.random_bool(amount) {
                if r.random_bool(0.5) {
                    1.0
                } else {
                    0.0
                }
            } else {
                p
            }
        })
        .collect()
}

/// Separable box filter with edge clamping, repeated `passes` times.
pub fn box_blur(images: &ImageBatch, radius: usize, passes: usize) -> Vec<f64> {
    let (h, w, ch) = (images.height(), images.width(), images.channels());
    let mut out = images.pixels().to_vec();
    let r = radius as isize;
    let norm = 1.0 / (2 * radius + 1) as f64;
    for i in 0..images.len() {
        let base = i * h * w * ch;
        for _ in 0..passes {
            for horizontal in [true, false] {
                let src = out[base..base + h * w * ch].to_vec();
                for y in 0..h {
                    for x in 0..w {
                        for c in 0..ch {
                            let mut acc = 0.0;
                            for d in -r..=r {
                                let (sy, sx) = if horizontal {
                                    (y as isize, (x as isize + d).clamp(0, w as isize - 1))
                                } else {
                                    ((y as isize + d).clamp(0, h as isize - 1), x as isize)
                                };
                                acc += src[(sy as usize * w + sx as usize) * ch + c];
                            }
                            out[base + (y * w + x) * ch + c] = clip(acc * norm);
                        }
                    }
                }
            }
        }
    }
    out
}

/// Scales each image's deviation from its own mean.
pub fn contrast(images: &ImageBatch, factor: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(images.pixels().len());
    for i in 0..images.len() {
        let img = images.image(i);
        let mean = img.iter().sum::<f64>() / img.len() as f64;
        out.extend(img.iter().map(|&p| clip((p - mean) * factor + mean)));
    }
    out
}

pub fn brightness(images: &ImageBatch, delta: f64) -> Vec<f64> {
    images.pixels().iter().map(|&p| clip(p + delta)).collect()
}

/// Replaces each `block × block` tile by its mean, blended with the original.
pub fn pixelate(images: &ImageBatch, block: usize, blend: f64) -> Vec<f64> {
    let (h, w, ch) = (images.height(), images.width(), images.channels());
    let mut out = images.pixels().to_vec();
    for i in 0..images.len() {
        let img = images.image(i);
        let base = i * h * w * ch;
        for by in (0..h).step_by(block) {
            for bx in (0..w).step_by(block) {
                let ys = by..(by + block).min(h);
                let xs = bx..(bx + block).min(w);
                for c in 0..ch {
                    let mut sum = 0.0;
                    let mut count = 0.0;
                    for y in ys.clone() {
                        for x in xs.clone() {
                            sum += img[(y * w + x) * ch + c];
                            count += 1.0;
                        }
                    }
                    let mean = sum / count;
                    for y in ys.clone() {
                        for x in xs.clone() {
                            let idx = (y * w + x) * ch + c;
                            out[base + idx] = clip((1.0 - blend) * img[idx] + blend * mean);
                        }
                    }
                }
            }
        }
    }
    out
}
