use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::batch::{ImageBatch, LabeledImages, Split};
use super::Dataset;
use crate::error::{Result, WattError};
use crate::seed::{derive_seed, rng};

pub const CLASS_NAMES: [&str; 8] = [
    "stripes",
    "columns",
    "diagonals",
    "checkers",
    "ring",
    "disk",
    "cross",
    "gradient",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub num_classes: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub image_size: usize,
    /// Pattern amplitude is drawn uniformly from this range.
    pub amplitude: (f64, f64),
    /// Background level is drawn uniformly from this range.
    pub background: (f64, f64),
    /// Std of the sensor noise present in clean images.
    pub pixel_noise: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_classes: 8,
            train_size: 4096,
            test_size: 1024,
            image_size: 16,
            amplitude: (0.12, 0.3),
            background: (0.3, 0.7),
            pixel_noise: 0.02,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=CLASS_NAMES.len()).contains(&self.num_classes) {
            return Err(WattError::invalid(format!(
                "num_classes must be in 2..={}",
                CLASS_NAMES.len()
            )));
        }
        if !self.train_size.is_multiple_of(self.num_classes) || !self.test_size.is_multiple_of(self.num_classes) {
            return Err(WattError::invalid("split sizes must be multiples of num_classes"));
        }
        if self.image_size < 4 {
            return Err(WattError::invalid("image_size must be at least 4"));
        }
        Ok(())
    }
}

/// Deterministic synthetic dataset with the default configuration.
pub fn generate_dataset(seed: u64) -> Result<Dataset> {
    generate_synthetic(&SyntheticConfig::default(), seed)
}

/// Class-balanced train and test splits drawn from independent streams.
/// Sample `i` of a split has label `i % num_classes`.
pub fn generate_synthetic(cfg: &SyntheticConfig, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let train = generate_split(cfg, Split::Train, cfg.train_size, derive_seed(seed, "synthetic/train"))?;
    let test = generate_split(cfg, Split::Test, cfg.test_size, derive_seed(seed, "synthetic/test"))?;
    Ok(Dataset {
        name: "synthetic".into(),
        class_names: CLASS_NAMES[..cfg.num_classes].iter().map(|s| s.to_string()).collect(),
        train,
        test,
    })
}

fn generate_split(cfg: &SyntheticConfig, split: Split, n: usize, seed: u64) -> Result<LabeledImages> {
    let s = cfg.image_size;
    let mut r = rng(seed);
    let mut pixels = Vec::with_capacity(n * s * s);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % cfg.num_classes;
        pixels.extend(render(cfg, label, &mut r));
        labels.push(label);
    }
    LabeledImages::new(split, ImageBatch::new(n, s, s, 1, pixels)?, labels)
}

fn render(cfg: &SyntheticConfig, class: usize, r: &mut impl Rng) -> Vec<f64> {
    let s = cfg.image_size;
    let sf = s as f64;
    let mid = (sf - 1.0) / 2.0;
    let bg = r.random_range(cfg.background.0..=cfg.background.1);
    let amp = r.random_range(cfg.amplitude.0..=cfg.amplitude.1) * if r.random_bool(0.5) { 1.0 } else { -1.0 };
    let phase = r.random_range(0.0..2.0 * PI);
    let phase2 = r.random_range(0.0..2.0 * PI);
    let cx = mid + r.random_range(-2.0..=2.0);
    let cy = mid + r.random_range(-2.0..=2.0);
    let freq = r.random_range(0.8..=1.2);
    let theta = r.random_range(0.0..2.0 * PI);
    let radius = r.random_range(0.0..=1.0);
    let width = r.random_range(0.7..=1.2);

    let pattern = |x: f64, y: f64| -> f64 {
        match class {
            0 => (2.0 * PI * 0.25 * freq * y + phase).sin(),
            1 => (2.0 * PI * 0.25 * freq * x + phase).sin(),
            2 => (2.0 * PI * 0.2 * freq * (x + y) / 2f64.sqrt() + phase).sin(),
            3 => {
                let v = (2.0 * PI * 0.14 * freq * x + phase).sin() * (2.0 * PI * 0.14 * freq * y + phase2).sin();
                v.signum()
            }
            4 => {
                let rr = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
                let ring_r = 3.5 + 2.0 * radius;
                (2.0 * (-(rr - ring_r).powi(2) / (2.0 * width * width)).exp()) - 1.0
            }
            5 => {
                let rr = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
                let disk_r = 2.5 + 2.5 * radius;
                2.0 / (1.0 + ((rr - disk_r) / 0.5).exp()) - 1.0
            }
            6 => {
                let h = (-(x - cx).powi(2) / (2.0 * width * width)).exp();
                let v = (-(y - cy).powi(2) / (2.0 * width * width)).exp();
                2.0 * h.max(v) - 1.0
            }
            _ => {
                let proj = (x - mid) * theta.cos() + (y - mid) * theta.sin();
                (proj / (sf / 2.0)).clamp(-1.0, 1.0)
            }
        }
    };

    let noise = Normal::new(0.0, cfg.pixel_noise.max(0.0)).expect("finite std");
    let mut out = Vec::with_capacity(s * s);
    for y in 0..s {
        for x in 0..s {
            let v = bg + amp * pattern(x as f64, y as f64) + noise.sample(r);
            out.push(v.clamp(0.0, 1.0));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticConfig {
        SyntheticConfig {
            train_size: 64,
            test_size: 32,
            ..SyntheticConfig::default()
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let a = generate_synthetic(&small(), 3).unwrap();
        let b = generate_synthetic(&small(), 3).unwrap();
        let c = generate_synthetic(&small(), 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.test.images, c.test.images);
    }

    #[test]
    fn default_splits_are_balanced_and_in_range() {
        let d = generate_dataset(0).unwrap();
        assert_eq!(d.train.len(), 4096);
        assert_eq!(d.test.len(), 1024);
        assert_eq!(d.test.class_histogram(8), vec![128; 8]);
        assert_eq!(d.train.split, Split::Train);
        assert_eq!(d.test.split, Split::Test);
        assert!(d.test.images.pixels().iter().all(|&p| (0.0..=1.0).contains(&p)));
        assert_ne!(d.train.images.image(0), d.test.images.image(0));
    }
}
