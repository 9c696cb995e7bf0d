use serde::{Deserialize, Serialize};

use crate::error::{Result, WattError};

/// Encoder hyperparameters. Stored verbatim in checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub image_size: usize,
    pub channels: usize,
    pub patch_size: usize,
    pub d_model: usize,
    pub visual_layers: usize,
    pub visual_heads: usize,
    pub mlp_hidden: usize,
    pub text_layers: usize,
    pub text_heads: usize,
    pub text_max_len: usize,
    /// Shared embedding dimension `D` of both encoders.
    pub embed_dim: usize,
    /// Softmax temperature for classification and pseudo-labels.
    pub tau: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image_size: 16,
            channels: 1,
            patch_size: 4,
            d_model: 32,
            visual_layers: 2,
            visual_heads: 2,
            mlp_hidden: 64,
            text_layers: 1,
            text_heads: 2,
            text_max_len: 64,
            embed_dim: 16,
            tau: 0.01,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("image_size", self.image_size),
            ("channels", self.channels),
            ("patch_size", self.patch_size),
            ("d_model", self.d_model),
            ("visual_heads", self.visual_heads),
            ("mlp_hidden", self.mlp_hidden),
            ("text_heads", self.text_heads),
            ("text_max_len", self.text_max_len),
            ("embed_dim", self.embed_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(WattError::invalid(format!("model.{name} must be positive")));
            }
        }
        if !self.image_size.is_multiple_of(self.patch_size) {
            return Err(WattError::invalid("model.image_size must be a multiple of patch_size"));
        }
        if !self.d_model.is_multiple_of(self.visual_heads) || !self.d_model.is_multiple_of(self.text_heads) {
            return Err(WattError::invalid("model.d_model must be divisible by the head counts"));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(WattError::invalid("model.tau must be positive"));
        }
        Ok(())
    }

    pub fn patches_per_side(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.patches_per_side() * self.patches_per_side()
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    /// LayerNorm layers in the visual encoder: two per block plus the final one.
    pub fn visual_layer_norm_count(&self) -> usize {
        2 * self.visual_layers + 1
    }
}
