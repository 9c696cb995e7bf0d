//! The dual encoder, its parameters and checkpoints.

mod checkpoint;
mod clip;
mod config;
mod layers;
mod params;
mod vocab;

pub use checkpoint::{
    load_checkpoint, load_checkpoint_for, save_checkpoint, Checkpoint, Provenance, FORMAT_VERSION, MAGIC,
};
pub use clip::{is_text, is_visual, is_visual_ln, ClipModel};
pub use config::ModelConfig;
pub use layers::Bound;
pub use params::{ParamGrads, ParameterSet};
pub use vocab::{tokenize, vocab_size, VOCAB};
