use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, WattError};

/// Unlabeled images, `len × height × width × channels`, row-major, values in `[0, 1]`.
///
/// Test-time adaptation consumes this type only, so labels are out of reach there.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBatch {
    len: usize,
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<f64>,
}

impl ImageBatch {
    pub fn new(len: usize, height: usize, width: usize, channels: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != len * height * width * channels {
            return Err(WattError::invalid(format!(
                "image batch {len}x{height}x{width}x{channels} needs {} pixels, got {}",
                len * height * width * channels,
                pixels.len()
            )));
        }
        Ok(ImageBatch {
            len,
            height,
            width,
            channels,
            pixels,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn image_size(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let n = self.image_size();
        &self.pixels[i * n..(i + 1) * n]
    }

    pub fn image_mut(&mut self, i: usize) -> &mut [f64] {
        let n = self.image_size();
        &mut self.pixels[i * n..(i + 1) * n]
    }

    pub fn select(&self, indices: &[usize]) -> ImageBatch {
        let n = self.image_size();
        let mut pixels = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            pixels.extend_from_slice(self.image(i));
        }
        ImageBatch {
            len: indices.len(),
            height: self.height,
            width: self.width,
            channels: self.channels,
            pixels,
        }
    }

    pub fn with_pixels(&self, pixels: Vec<f64>) -> Result<ImageBatch> {
        ImageBatch::new(self.len, self.height, self.width, self.channels, pixels)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Images with labels, tagged with the split they came from.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImages {
    pub split: Split,
    pub images: ImageBatch,
    pub labels: Vec<usize>,
}

impl LabeledImages {
    pub fn new(split: Split, images: ImageBatch, labels: Vec<usize>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(WattError::invalid("image and label counts differ"));
        }
        Ok(LabeledImages { split, images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> LabeledImages {
        LabeledImages {
            split: self.split,
            images: self.images.select(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// The first `n` samples.
    pub fn head(&self, n: usize) -> LabeledImages {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx)
    }

    pub fn class_histogram(&self, num_classes: usize) -> Vec<usize> {
        let mut h = vec![0; num_classes];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }
}

/// A batch as produced by [`batch_iter`]. Labels are for evaluation only.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub images: ImageBatch,
    labels: Option<Vec<usize>>,
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn new(images: ImageBatch, labels: Option<Vec<usize>>, indices: Vec<usize>) -> Self {
        Batch {
            images,
            labels,
            indices,
        }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }
}

/// Seeded shuffle of `data` cut into batches of `batch_size`; the short tail
/// batch is kept unless `drop_last`.
pub fn batch_iter(data: &LabeledImages, batch_size: usize, seed: u64, drop_last: bool) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(WattError::invalid("batch size must be at least 1"));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(order
        .chunks(batch_size)
        .filter(|c| !drop_last || c.len() == batch_size)
        .map(|idx| {
            Batch::new(
                data.images.select(idx),
                Some(idx.iter().map(|&i| data.labels[i]).collect()),
                idx.to_vec(),
            )
        })
        .collect())
}
