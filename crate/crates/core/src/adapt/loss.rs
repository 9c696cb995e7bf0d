//! Zero-shot classification, transductive pseudo-labels and the adaptation losses.

use crate::autodiff::{Graph, Tensor, Var};
use crate::data::ImageBatch;
use crate::error::{Result, WattError};
use crate::model::ClipModel;
use crate::ops::{argmax_rows, gather_rows, log_softmax_rows, matmul_nt, normalize_rows, softmax_rows};
use crate::pretrain::class_prompts;

/// Row-stochastic class probabilities `softmax_k(cos(z_i, t_k) / tau)`.
pub fn classify_embeddings(image_emb: &Tensor, class_emb: &Tensor, tau: f64) -> Result<Tensor> {
    if class_emb.ndim() != 2 || class_emb.shape()[0] < 2 {
        return Err(WattError::invalid("classification needs at least 2 classes"));
    }
    let cos = matmul_nt(&normalize_rows(image_emb)?, &normalize_rows(class_emb)?)?;
    softmax_rows(&cos, tau)
}

/// Class probabilities of `images` against the given class prompts.
pub fn classify(model: &ClipModel, images: &ImageBatch, class_prompts: &[String]) -> Result<Tensor> {
    if class_prompts.len() < 2 {
        return Err(WattError::invalid("classification needs at least 2 classes"));
    }
    let zt = model.encode_text(class_prompts)?;
    let zv = model.encode_image(images)?;
    classify_embeddings(&zv, &zt, model.tau())
}

/// Fixed targets of one transductive step: the pseudo-label matrix `q` and
/// the instance text embeddings `zt` (row i is the class prompt embedding
/// of image i's predicted class).
#[derive(Clone, Debug, PartialEq)]
pub struct Targets {
    pub q: Tensor,
    pub zt: Tensor,
}

/// Similarity matrices, pseudo-labels and inter-modality probabilities of a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityBundle {
    /// Image-image cosine similarities.
    pub sv: Tensor,
    /// Text-text cosine similarities of the instance text embeddings.
    pub st: Tensor,
    /// `softmax((sv + st) / 2tau)` by rows.
    pub q: Tensor,
    /// `softmax_j(cos(zv_i, zt_j) / tau)`.
    pub p: Tensor,
    pub log_p: Tensor,
    /// Unit-norm instance text embeddings.
    pub zt: Tensor,
    pub pseudo_classes: Vec<usize>,
}

impl SimilarityBundle {
    pub fn targets(&self) -> Targets {
        Targets {
            q: self.q.clone(),
            zt: self.zt.clone(),
        }
    }
}

/// Builds the bundle from image embeddings and class text embeddings. Both
/// are normalized here, so any positive rescaling of either leaves the
/// result unchanged.
pub fn bundle_from_embeddings(image_emb: &Tensor, class_emb: &Tensor, tau: f64) -> Result<SimilarityBundle> {
    let zv = normalize_rows(image_emb)?;
    let classes = normalize_rows(class_emb)?;
    let pseudo_classes = argmax_rows(&matmul_nt(&zv, &classes)?)?;
    let zt = gather_rows(&classes, &pseudo_classes)?;
    let sv = matmul_nt(&zv, &zv)?;
    let st = matmul_nt(&zt, &zt)?;
    let mut sum = sv.clone();
    for (a, &b) in sum.data_mut().iter_mut().zip(st.data()) {
        *a += b;
    }
    let q = softmax_rows(&sum, 2.0 * tau)?;
    let cross = matmul_nt(&zv, &zt)?;
    let log_p = log_softmax_rows(&cross, tau)?;
    let p = softmax_rows(&cross, tau)?;
    Ok(SimilarityBundle {
        sv,
        st,
        q,
        p,
        log_p,
        zt,
        pseudo_classes,
    })
}

/// Targets of one transductive step from the current image embeddings.
pub fn pseudo_targets(image_emb: &Tensor, class_emb: &Tensor, tau: f64) -> Result<Targets> {
    Ok(bundle_from_embeddings(image_emb, class_emb, tau)?.targets())
}

/// Pseudo-labels for `images` under one template, from the model's current
/// visual parameters and frozen text encoder.
pub fn build_pseudo_labels(
    model: &ClipModel,
    images: &ImageBatch,
    template: &str,
    class_names: &[String],
) -> Result<SimilarityBundle> {
    let class_emb = model.encode_text(&class_prompts(template, class_names))?;
    let zv = model.encode_image(images)?;
    bundle_from_embeddings(&zv, &class_emb, model.tau())
}

/// `-(1/B) Σ_ij q_ij log p_ij`.
pub fn tta_loss(bundle: &SimilarityBundle) -> f64 {
    cross_entropy_rows(&bundle.q, &bundle.log_p)
}

fn cross_entropy_rows(q: &Tensor, log_p: &Tensor) -> f64 {
    let b = q.shape()[0] as f64;
    let total: f64 = q
        .data()
        .iter()
        .zip(log_p.data())
        .filter(|(&qi, _)| qi != 0.0)
        .map(|(qi, lp)| qi * lp)
        .sum();
    -total / b
}

/// Mean Shannon entropy of the rows of a row-stochastic matrix.
pub fn entropy_loss(p: &Tensor) -> f64 {
    let b = p.shape()[0] as f64;
    let total: f64 = p.data().iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum();
    -total / b
}

/// Transductive loss on the tape; `zv` must be unit-norm rows and gradients
/// do not flow into the targets.
pub(crate) fn tta_loss_graph(g: &mut Graph, zv: Var, targets: &Targets, tau: f64) -> Result<Var> {
    let b = g.shape(zv)[0];
    if targets.q.shape() != [b, b] || targets.zt.shape()[0] != b {
        return Err(WattError::shape("tta_loss", &[b, b], targets.q.shape()));
    }
    let ztt = g.constant(transpose(&targets.zt));
    let logits = g.matmul(zv, ztt)?;
    let logits = g.scale(logits, 1.0 / tau);
    let log_p = g.log_softmax(logits, 1)?;
    let q = g.constant(targets.q.clone());
    let weighted = g.mul(log_p, q)?;
    let total = g.sum_all(weighted);
    Ok(g.scale(total, -1.0 / b as f64))
}

/// Mean prediction entropy over the class prompts, on the tape.
pub(crate) fn entropy_loss_graph(g: &mut Graph, zv: Var, class_emb: &Tensor, tau: f64) -> Result<Var> {
    let b = g.shape(zv)[0];
    let ct = g.constant(transpose(&normalize_rows(class_emb)?));
    let logits = g.matmul(zv, ct)?;
    let logits = g.scale(logits, 1.0 / tau);
    let log_p = g.log_softmax(logits, 1)?;
    let p = g.exp(log_p);
    let plogp = g.mul(p, log_p)?;
    let total = g.sum_all(plogp);
    Ok(g.scale(total, -1.0 / b as f64))
}

pub(crate) fn transpose(t: &Tensor) -> Tensor {
    let (r, c) = (t.shape()[0], t.shape()[1]);
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = t.data()[i * c + j];
        }
    }
    Tensor::new(vec![c, r], out).expect("sized")
}
