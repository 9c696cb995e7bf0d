//! Contrastive pretraining of the dual encoder on clean training images.

use log::info;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, AdamState, Graph, Tensor, Var};
use crate::data::{batch_iter, Dataset, LabeledImages, Split};
use crate::error::{Result, WattError};
use crate::model::{Bound, Checkpoint, ClipModel, Provenance};
use crate::ops::{argmax_rows, cosine_matrix};
use crate::seed::derive_seed;

pub const DEFAULT_CAPTION_TEMPLATE: &str = "a photo of a {}";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Contrastive temperature. Independent of the inference temperature.
    pub temperature: f64,
    pub caption_template: String,
    /// Minimum clean zero-shot accuracy; pretraining fails below it.
    pub accuracy_gate: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 30,
            batch_size: 128,
            lr: 3e-4,
            temperature: 0.07,
            caption_template: DEFAULT_CAPTION_TEMPLATE.to_string(),
            accuracy_gate: 0.90,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size < 2 {
            return Err(WattError::invalid("pretrain needs epochs >= 1 and batch_size >= 2"));
        }
        if !(self.lr > 0.0 && self.temperature > 0.0) {
            return Err(WattError::invalid("pretrain lr and temperature must be positive"));
        }
        if self.caption_template.matches("{}").count() != 1 {
            return Err(WattError::invalid("caption template needs exactly one `{}` slot"));
        }
        if !(0.0..=1.0).contains(&self.accuracy_gate) {
            return Err(WattError::invalid("accuracy_gate must be in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mean_loss: f64,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainMetrics {
    pub epochs: Vec<EpochMetrics>,
    pub clean_accuracy: f64,
}

pub struct PretrainOutcome {
    pub checkpoint: Checkpoint,
    pub metrics: PretrainMetrics,
}

/// Symmetric InfoNCE on the tape: mean of the image-to-text and text-to-image
/// cross-entropies against the diagonal of `img · txtᵀ / temp`.
pub fn contrastive_loss_graph(g: &mut Graph, img: Var, txt: Var, temp: f64) -> Result<Var> {
    let b = g.shape(img)[0];
    if b < 2 {
        return Err(WattError::invalid("contrastive loss needs a batch of at least 2"));
    }
    if g.shape(txt) != g.shape(img) {
        return Err(WattError::shape("contrastive_loss", g.shape(img), g.shape(txt)));
    }
    let tt = g.transpose(txt)?;
    let logits = g.matmul(img, tt)?;
    let logits = g.scale(logits, 1.0 / temp);
    let eye = g.constant(identity(b));
    let rows = g.log_softmax(logits, 1)?;
    let cols = g.log_softmax(logits, 0)?;
    let both = g.add(rows, cols)?;
    let diag = g.mul(both, eye)?;
    let total = g.sum_all(diag);
    Ok(g.scale(total, -0.5 / b as f64))
}

/// Value of the symmetric contrastive loss for fixed embeddings.
pub fn contrastive_loss(img: &Tensor, txt: &Tensor, temp: f64) -> Result<f64> {
    let mut g = Graph::new();
    let i = g.constant(img.clone());
    let t = g.constant(txt.clone());
    let loss = contrastive_loss_graph(&mut g, i, t, temp)?;
    Ok(g.value(loss).data()[0])
}

fn identity(n: usize) -> Tensor {
    let mut t = Tensor::zeros(&[n, n]);
    for i in 0..n {
        t.data_mut()[i * n + i] = 1.0;
    }
    t
}

pub fn class_prompts(template: &str, class_names: &[String]) -> Vec<String> {
    class_names.iter().map(|c| template.replacen("{}", c, 1)).collect()
}

/// Fraction of `data` whose argmax cosine class prompt matches the label.
pub fn zero_shot_accuracy(model: &ClipModel, data: &LabeledImages, prompts: &[String]) -> Result<f64> {
    if data.is_empty() {
        return Err(WattError::invalid("zero-shot accuracy of an empty split"));
    }
    let zt = model.encode_text(prompts)?;
    let zv = model.encode_image(&data.images)?;
    let pred = argmax_rows(&cosine_matrix(&zv, &zt)?)?;
    let correct = pred.iter().zip(&data.labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / data.len() as f64)
}

/// Trains every parameter of `model` in place with T0-style captions and
/// returns the checkpoint. Fails if clean test accuracy stays under the gate.
pub fn pretrain(model: &mut ClipModel, dataset: &Dataset, cfg: &PretrainConfig, seed: u64) -> Result<PretrainOutcome> {
    cfg.validate()?;
    if dataset.train.split != Split::Train {
        return Err(WattError::Dataset("pretraining requires the train split".into()));
    }
    if dataset.train.len() < cfg.batch_size {
        return Err(WattError::Dataset(format!(
            "train split has {} samples, fewer than one batch of {}",
            dataset.train.len(),
            cfg.batch_size
        )));
    }
    let prompts = class_prompts(&cfg.caption_template, &dataset.class_names);
    let mut adam = AdamState::new(cfg.lr);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let batches = batch_iter(
            &dataset.train,
            cfg.batch_size,
            derive_seed(seed, &format!("pretrain/shuffle/{epoch}")),
            true,
        )?;
        let mut total = 0.0;
        for batch in &batches {
            let labels = batch.labels().expect("train batches carry labels");
            let mut g = Graph::new();
            let bound = Bound::bind(&mut g, model.params(), |_| true, |_| true);
            let zv = model.visual_forward(&mut g, &bound, &batch.images)?;
            let zt_all = model.text_forward(&mut g, &bound, &prompts)?;
            let zt = g.gather_rows(zt_all, labels)?;
            let loss = contrastive_loss_graph(&mut g, zv, zt, cfg.temperature)?;
            let value = g.value(loss).data()[0];
            if !value.is_finite() {
                return Err(WattError::NonFinite {
                    value,
                    step,
                    context: format!("pretraining epoch {epoch}"),
                });
            }
            let grads = g.backward(loss)?;
            let mut pg = bound.collect_grads(&g, &grads);
            adam_step(model.params_mut(), &mut pg, &mut adam)?;
            total += value;
            step += 1;
        }
        let mean_loss = total / batches.len() as f64;
        info!("pretrain epoch {epoch}: loss {mean_loss:.5}");
        epochs.push(EpochMetrics {
            epoch,
            mean_loss,
            steps: batches.len(),
        });
    }
    let clean_accuracy = zero_shot_accuracy(model, &dataset.test, &prompts)?;
    info!("pretrain clean zero-shot accuracy {clean_accuracy:.4}");
    if clean_accuracy < cfg.accuracy_gate {
        return Err(WattError::PretrainGate {
            accuracy: clean_accuracy,
            threshold: cfg.accuracy_gate,
            epochs: cfg.epochs,
        });
    }
    let last_loss = epochs.last().map(|e| e.mean_loss);
    let checkpoint = Checkpoint::from_model(model, Provenance::new(seed, cfg.epochs, last_loss));
    Ok(PretrainOutcome {
        checkpoint,
        metrics: PretrainMetrics { epochs, clean_accuracy },
    })
}
