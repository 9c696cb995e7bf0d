use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use super::layers::{layer_norm, linear, transformer_block, Bound};
use super::params::ParameterSet;
use super::vocab::{tokenize, vocab_size};
use crate::autodiff::{Graph, Tensor, Var};
use crate::data::ImageBatch;
use crate::error::{Result, WattError};

/// Largest batch pushed through one forward pass when only embeddings are needed.
const ENCODE_CHUNK: usize = 128;

pub fn is_visual(name: &str) -> bool {
    name.starts_with("visual.")
}

pub fn is_text(name: &str) -> bool {
    name.starts_with("text.")
}

/// Affine parameters of a visual-encoder LayerNorm. LayerNorms are the only
/// layers with `gamma`/`beta` entries.
pub fn is_visual_ln(name: &str) -> bool {
    is_visual(name) && (name.ends_with(".gamma") || name.ends_with(".beta"))
}

/// The tiny dual encoder: a ViT over image patches and a character-level text
/// transformer, both projecting to unit-norm `embed_dim` vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipModel {
    config: ModelConfig,
    params: ParameterSet,
}

impl ClipModel {
    /// Fresh, randomly initialized model.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParameterSet::new();
        let d = config.d_model;
        let mut normal = |shape: &[usize], std: f64| -> Tensor {
            let dist = Normal::new(0.0, std).expect("finite std");
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| dist.sample(&mut rng)).collect();
            Tensor::new(shape.to_vec(), data).expect("sized")
        };

        p.insert(
            "visual.patch_embed.weight",
            normal(&[config.patch_dim(), d], (config.patch_dim() as f64).powf(-0.5)),
        )?;
        p.insert("visual.patch_embed.bias", Tensor::zeros(&[d]))?;
        p.insert("visual.cls_token", normal(&[1, d], 0.02))?;
        p.insert("visual.pos_embed", normal(&[config.num_patches() + 1, d], 0.02))?;
        for i in 0..config.visual_layers {
            insert_block(&mut p, &format!("visual.blocks.{i}"), &config, &mut normal)?;
        }
        insert_ln(&mut p, "visual.final_norm", d)?;
        p.insert(
            "visual.proj.weight",
            normal(&[d, config.embed_dim], (d as f64).powf(-0.5)),
        )?;

        p.insert("text.token_embed", normal(&[vocab_size(), d], 0.1))?;
        p.insert("text.pos_embed", normal(&[config.text_max_len, d], 0.02))?;
        for i in 0..config.text_layers {
            insert_block(&mut p, &format!("text.blocks.{i}"), &config, &mut normal)?;
        }
        insert_ln(&mut p, "text.final_norm", d)?;
        p.insert(
            "text.proj.weight",
            normal(&[d, config.embed_dim], (d as f64).powf(-0.5)),
        )?;

        Ok(ClipModel { config, params: p })
    }

    /// Wraps existing parameters after checking they match the layout `config` implies.
    pub fn from_parameters(config: ModelConfig, params: ParameterSet) -> Result<Self> {
        let layout = ClipModel::init(config.clone(), 0)?;
        layout
            .params
            .check_congruent(&params)
            .map_err(|e| WattError::ConfigMismatch(format!("parameters do not fit the model config: {e}")))?;
        Ok(ClipModel { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn tau(&self) -> f64 {
        self.config.tau
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    /// Replaces the named subset of parameters.
    pub fn set_parameters(&mut self, update: &ParameterSet) -> Result<()> {
        self.params.assign(update)
    }

    /// Copy of `self` with `update` substituted.
    pub fn with_parameters(&self, update: &ParameterSet) -> Result<ClipModel> {
        let mut m = self.clone();
        m.set_parameters(update)?;
        Ok(m)
    }

    /// `γ` and `β` of every LayerNorm in the visual encoder, nothing else.
    pub fn ln_parameters(&self) -> ParameterSet {
        self.params.subset(is_visual_ln)
    }

    pub fn check_images(&self, images: &ImageBatch) -> Result<()> {
        let c = &self.config;
        if images.height() != c.image_size || images.width() != c.image_size || images.channels() != c.channels {
            return Err(WattError::shape(
                "encode_image",
                &[images.len(), images.height(), images.width(), images.channels()],
                &[images.len(), c.image_size, c.image_size, c.channels],
            ));
        }
        if images.is_empty() {
            return Err(WattError::invalid("empty image batch"));
        }
        Ok(())
    }

    /// Patch tokens `[B, num_patches, patch_dim]`, patches in row-major order.
    pub fn patchify(&self, images: &ImageBatch) -> Result<Tensor> {
        self.check_images(images)?;
        let c = &self.config;
        let (ps, side, ch) = (c.patch_size, c.patches_per_side(), c.channels);
        let w = c.image_size;
        let mut out = Vec::with_capacity(images.pixels().len());
        for i in 0..images.len() {
            let img = images.image(i);
            for py in 0..side {
                for px in 0..side {
                    for y in 0..ps {
                        let row = (py * ps + y) * w + px * ps;
                        out.extend_from_slice(&img[row * ch..(row + ps) * ch]);
                    }
                }
            }
        }
        Tensor::new(vec![images.len(), c.num_patches(), c.patch_dim()], out)
    }

    /// Visual forward pass on `g`; returns L2-normalized `[B, D]` embeddings.
    pub fn visual_forward(&self, g: &mut Graph, b: &Bound, images: &ImageBatch) -> Result<Var> {
        let c = &self.config;
        let n = images.len();
        let patches = g.constant(self.patchify(images)?);
        let tokens = linear(g, b, "visual.patch_embed", patches, true)?;
        let cls = g.broadcast_leading(b.get("visual.cls_token")?, n)?;
        let x = g.concat(&[cls, tokens], 1)?;
        let mut x = g.add(x, b.get("visual.pos_embed")?)?;
        for i in 0..c.visual_layers {
            x = transformer_block(g, b, &format!("visual.blocks.{i}"), x, c.visual_heads)?;
        }
        let cls_out = g.slice(x, 1, 0, 1)?;
        let cls_out = g.reshape(cls_out, &[n, c.d_model])?;
        let h = layer_norm(g, b, "visual.final_norm", cls_out)?;
        let z = linear(g, b, "visual.proj", h, false)?;
        g.l2_normalize(z, 1)
    }

    /// Text forward pass; returns L2-normalized `[K, D]` embeddings, one row per prompt.
    pub fn text_forward(&self, g: &mut Graph, b: &Bound, prompts: &[String]) -> Result<Var> {
        if prompts.is_empty() {
            return Err(WattError::invalid("encode_text needs at least one prompt"));
        }
        let c = &self.config;
        let mut rows = Vec::with_capacity(prompts.len());
        for prompt in prompts {
            let ids = tokenize(prompt, c.text_max_len)?;
            let t = ids.len();
            let tok = g.gather_rows(b.get("text.token_embed")?, &ids)?;
            let pos = g.slice(b.get("text.pos_embed")?, 0, 0, t)?;
            let x = g.add(tok, pos)?;
            let mut x = g.reshape(x, &[1, t, c.d_model])?;
            for i in 0..c.text_layers {
                x = transformer_block(g, b, &format!("text.blocks.{i}"), x, c.text_heads)?;
            }
            let x = layer_norm(g, b, "text.final_norm", x)?;
            let pooled = g.mean(x, 1)?;
            rows.push(linear(g, b, "text.proj", pooled, false)?);
        }
        let z = if rows.len() == 1 { rows[0] } else { g.concat(&rows, 0)? };
        g.l2_normalize(z, 1)
    }

    /// Embeddings of `images` without gradient tracking.
    pub fn encode_image(&self, images: &ImageBatch) -> Result<Tensor> {
        self.check_images(images)?;
        let mut data = Vec::with_capacity(images.len() * self.config.embed_dim);
        let idx: Vec<usize> = (0..images.len()).collect();
        for chunk in idx.chunks(ENCODE_CHUNK) {
            let sub;
            let part = if chunk.len() == images.len() {
                images
            } else {
                sub = images.select(chunk);
                &sub
            };
            let mut g = Graph::new();
            let b = Bound::bind(&mut g, &self.params, is_visual, |_| false);
            let z = self.visual_forward(&mut g, &b, part)?;
            data.extend_from_slice(g.value(z).data());
        }
        Tensor::new(vec![images.len(), self.config.embed_dim], data)
    }

    /// Embeddings of `prompts` without gradient tracking.
    pub fn encode_text(&self, prompts: &[String]) -> Result<Tensor> {
        let mut g = Graph::new();
        let b = Bound::bind(&mut g, &self.params, is_text, |_| false);
        let z = self.text_forward(&mut g, &b, prompts)?;
        Ok(g.value(z).clone())
    }
}

fn insert_ln(p: &mut ParameterSet, prefix: &str, d: usize) -> Result<()> {
    p.insert(format!("{prefix}.gamma"), Tensor::full(&[d], 1.0))?;
    p.insert(format!("{prefix}.beta"), Tensor::zeros(&[d]))
}

fn insert_block(
    p: &mut ParameterSet,
    prefix: &str,
    c: &ModelConfig,
    normal: &mut impl FnMut(&[usize], f64) -> Tensor,
) -> Result<()> {
    let (d, h) = (c.d_model, c.mlp_hidden);
    let inv_sqrt = |n: usize| (n as f64).powf(-0.5);
    insert_ln(p, &format!("{prefix}.ln1"), d)?;
    p.insert(format!("{prefix}.attn.qkv.weight"), normal(&[d, 3 * d], inv_sqrt(d)))?;
    p.insert(format!("{prefix}.attn.qkv.bias"), Tensor::zeros(&[3 * d]))?;
    p.insert(format!("{prefix}.attn.out.weight"), normal(&[d, d], inv_sqrt(d)))?;
    p.insert(format!("{prefix}.attn.out.bias"), Tensor::zeros(&[d]))?;
    insert_ln(p, &format!("{prefix}.ln2"), d)?;
    p.insert(format!("{prefix}.mlp.fc1.weight"), normal(&[d, h], inv_sqrt(d)))?;
    p.insert(format!("{prefix}.mlp.fc1.bias"), Tensor::zeros(&[h]))?;
    p.insert(format!("{prefix}.mlp.fc2.weight"), normal(&[h, d], inv_sqrt(h)))?;
    p.insert(format!("{prefix}.mlp.fc2.bias"), Tensor::zeros(&[d]))
}
