//! Datasets, corruptions and batching.

mod batch;
pub mod cifar;
pub mod corruption;
pub mod synthetic;

pub use batch::{batch_iter, Batch, ImageBatch, LabeledImages, Split};
pub use cifar::load_cifar10;
pub use corruption::{apply_corruption, Corruption, CorruptionKind};
pub use synthetic::{generate_dataset, generate_synthetic, SyntheticConfig};

/// A labeled dataset with class names and both splits.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub class_names: Vec<String>,
    pub train: LabeledImages,
    pub test: LabeledImages,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }
}
