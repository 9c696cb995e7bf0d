//! Reader for the CIFAR-10 binary distribution (`data_batch_{1..5}.bin`,
//! `test_batch.bin`; 3073-byte records of one label byte and 3072 pixel bytes,
//! red plane then green then blue, 32×32 each).
//!
//! Images are converted to luma and 2×2 average-pooled to 16×16.

use std::fs;
use std::path::Path;

use super::batch::{ImageBatch, LabeledImages, Split};
use super::Dataset;
use crate::error::{Result, WattError};

pub const RECORD_LEN: usize = 3073;
pub const CLASS_NAMES: [&str; 10] = [
    "airplane",
    "automobile",
    "bird",
    "cat",
    "deer",
    "dog",
    "frog",
    "horse",
    "ship",
    "truck",
];

const SIDE: usize = 32;
const OUT_SIDE: usize = 16;

/// Loads `test_batch.bin` (required) and any `data_batch_*.bin` files present.
pub fn load_cifar10(dir: &Path) -> Result<Dataset> {
    let test_path = dir.join("test_batch.bin");
    if !test_path.exists() {
        return Err(WattError::Dataset(format!("{} not found", test_path.display())));
    }
    let test = read_batch_file(&test_path, Split::Test)?;
    let mut train_parts = Vec::new();
    for i in 1..=5 {
        let p = dir.join(format!("data_batch_{i}.bin"));
        if p.exists() {
            train_parts.push(read_batch_file(&p, Split::Train)?);
        }
    }
    let train = concat_parts(train_parts)?;
    Ok(Dataset {
        name: "cifar10".into(),
        class_names: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
        train,
        test,
    })
}

fn concat_parts(parts: Vec<LabeledImages>) -> Result<LabeledImages> {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for p in parts {
        pixels.extend_from_slice(p.images.pixels());
        labels.extend(p.labels);
    }
    let n = labels.len();
    LabeledImages::new(Split::Train, ImageBatch::new(n, OUT_SIDE, OUT_SIDE, 1, pixels)?, labels)
}

pub fn read_batch_file(path: &Path, split: Split) -> Result<LabeledImages> {
    let bytes = fs::read(path)?;
    parse_records(&bytes, split).map_err(|e| WattError::Dataset(format!("{}: {e}", path.display())))
}

pub fn parse_records(bytes: &[u8], split: Split) -> Result<LabeledImages> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(RECORD_LEN) {
        return Err(WattError::Dataset(format!(
            "size {} is not a positive multiple of {RECORD_LEN}",
            bytes.len()
        )));
    }
    let n = bytes.len() / RECORD_LEN;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * OUT_SIDE * OUT_SIDE);
    for rec in bytes.chunks_exact(RECORD_LEN) {
        let label = usize::from(rec[0]);
        if label >= CLASS_NAMES.len() {
            return Err(WattError::Dataset(format!("label byte {label} out of range")));
        }
        labels.push(label);
        let plane = SIDE * SIDE;
        let (r, g, b) = (
            &rec[1..1 + plane],
            &rec[1 + plane..1 + 2 * plane],
            &rec[1 + 2 * plane..],
        );
        let luma = |i: usize| (0.299 * f64::from(r[i]) + 0.587 * f64::from(g[i]) + 0.114 * f64::from(b[i])) / 255.0;
        for y in 0..OUT_SIDE {
            for x in 0..OUT_SIDE {
                let i = 2 * y * SIDE + 2 * x;
                let v = (luma(i) + luma(i + 1) + luma(i + SIDE) + luma(i + SIDE + 1)) / 4.0;
                pixels.push(v.clamp(0.0, 1.0));
            }
        }
    }
    LabeledImages::new(split, ImageBatch::new(n, OUT_SIDE, OUT_SIDE, 1, pixels)?, labels)
}
