//! LayerNorm-only adaptation and multi-template weight averaging.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{classify_embeddings, entropy_loss_graph, pseudo_targets, tta_loss_graph, Targets};
use super::templates::{mean_tensors, TextBank};
use crate::autodiff::{adam_step, AdamState, Graph, Tensor, DEFAULT_LR};
use crate::data::ImageBatch;
use crate::error::{Result, WattError};
use crate::model::{is_visual, is_visual_ln, Bound, ClipModel, ParamGrads, ParameterSet};
use crate::pretrain::class_prompts;
use crate::seed::{derive_index, derive_seed, rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MtwaMode {
    Parallel,
    Sequential,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    TransductiveCe,
    EntropyMin,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MtwaConfig {
    pub mode: MtwaMode,
    /// Optimization steps per template between averaging points.
    #[serde(rename = "L")]
    pub inner_steps: usize,
    /// Averaging rounds.
    #[serde(rename = "M")]
    pub rounds: usize,
    /// Visit templates in a seeded random order (sequential mode only).
    pub shuffle_templates: bool,
    pub lr: f64,
    pub loss: LossKind,
    /// Recompute pseudo-labels before every step; when off they are computed
    /// once per template visit, at the parameters the visit starts from.
    pub refresh_pseudo_labels: bool,
    pub seed: u64,
}

impl Default for MtwaConfig {
    fn default() -> Self {
        MtwaConfig {
            mode: MtwaMode::Sequential,
            inner_steps: 2,
            rounds: 5,
            shuffle_templates: true,
            lr: DEFAULT_LR,
            loss: LossKind::TransductiveCe,
            refresh_pseudo_labels: true,
            seed: 0,
        }
    }
}

impl MtwaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.inner_steps == 0 || self.rounds == 0 {
            return Err(WattError::invalid("L and M must both be at least 1"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(WattError::invalid("lr must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Loss and visual-LN gradients for fixed targets, with the LN parameters
/// of `model` replaced by `ln`.
pub fn tta_loss_with_grads(
    model: &ClipModel,
    ln: &ParameterSet,
    images: &ImageBatch,
    targets: &Targets,
) -> Result<(f64, ParamGrads)> {
    let mut g = Graph::new();
    let bound = Bound::bind_with_overrides(&mut g, model.params(), ln, is_visual)?;
    let zv = model.visual_forward(&mut g, &bound, images)?;
    let loss = tta_loss_graph(&mut g, zv, targets, model.tau())?;
    let value = g.value(loss).data()[0];
    let grads = g.backward(loss)?;
    Ok((value, bound.collect_grads(&g, &grads)))
}

/// Loss value only; the forward pass is the same as in [`tta_loss_with_grads`].
pub fn tta_loss_value(model: &ClipModel, ln: &ParameterSet, images: &ImageBatch, targets: &Targets) -> Result<f64> {
    let mut g = Graph::new();
    let bound = Bound::bind_with_overrides(&mut g, model.params(), ln, is_visual)?;
    let zv = model.visual_forward(&mut g, &bound, images)?;
    let loss = tta_loss_graph(&mut g, zv, targets, model.tau())?;
    Ok(g.value(loss).data()[0])
}

/// Adam on the visual LayerNorm parameters of a frozen model for one batch.
///
/// The adapter holds the live LN parameters and optimizer state; callers
/// decide when to reset either, which is what distinguishes the schedules.
pub struct LnAdapter<'a> {
    model: &'a ClipModel,
    images: &'a ImageBatch,
    ln: ParameterSet,
    adam: AdamState,
    loss: LossKind,
    refresh: bool,
    targets: Option<Targets>,
    steps: usize,
}

impl<'a> LnAdapter<'a> {
    pub fn new(
        model: &'a ClipModel,
        images: &'a ImageBatch,
        ln: ParameterSet,
        lr: f64,
        loss: LossKind,
        refresh: bool,
    ) -> Result<Self> {
        model.check_images(images)?;
        if let Some(bad) = ln.names().find(|n| !is_visual_ln(n)) {
            return Err(WattError::invalid(format!(
                "`{bad}` is not a visual LayerNorm parameter"
            )));
        }
        ln.check_congruent(&model.params().subset(|n| ln.contains(n)))?;
        Ok(LnAdapter {
            model,
            images,
            ln,
            adam: AdamState::new(lr),
            loss,
            refresh,
            targets: None,
            steps: 0,
        })
    }

    pub fn params(&self) -> &ParameterSet {
        &self.ln
    }

    pub fn into_params(self) -> ParameterSet {
        self.ln
    }

    pub fn set_params(&mut self, ln: ParameterSet) -> Result<()> {
        self.ln.check_congruent(&ln)?;
        self.ln = ln;
        Ok(())
    }

    pub fn reset_optimizer(&mut self) {
        self.adam = AdamState::new(self.adam.lr);
    }

    /// Marks the start of a template visit; stored pseudo-labels are dropped.
    pub fn begin_template(&mut self) {
        self.targets = None;
    }

    /// One Adam step against `class_emb`; returns the loss before the update.
    pub fn step(&mut self, class_emb: &Tensor) -> Result<f64> {
        let tau = self.model.tau();
        let mut g = Graph::new();
        let bound = Bound::bind_with_overrides(&mut g, self.model.params(), &self.ln, is_visual)?;
        let zv = self.model.visual_forward(&mut g, &bound, self.images)?;
        let loss = match self.loss {
            LossKind::TransductiveCe => {
                if self.refresh || self.targets.is_none() {
                    self.targets = Some(pseudo_targets(g.value(zv), class_emb, tau)?);
                }
                tta_loss_graph(&mut g, zv, self.targets.as_ref().expect("set above"), tau)?
            }
            LossKind::EntropyMin => entropy_loss_graph(&mut g, zv, class_emb, tau)?,
        };
        let value = g.value(loss).data()[0];
        if !value.is_finite() {
            return Err(WattError::NonFinite {
                value,
                step: self.steps,
                context: format!("LayerNorm adaptation on a batch of {}", self.images.len()),
            });
        }
        let grads = g.backward(loss)?;
        let mut pg = bound.collect_grads(&g, &grads);
        adam_step(&mut self.ln, &mut pg, &mut self.adam)?;
        self.steps += 1;
        Ok(value)
    }
}

fn check_steps(steps: usize) -> Result<()> {
    if steps == 0 {
        return Err(WattError::invalid("adaptation needs at least one step (L >= 1)"));
    }
    Ok(())
}

/// `steps` Adam steps from the model's own LN parameters with a fresh
/// optimizer, pseudo-labels refreshed every step. Returns the adapted LN set.
pub fn adapt_single_template(
    model: &ClipModel,
    images: &ImageBatch,
    template: &str,
    class_names: &[String],
    steps: usize,
    lr: f64,
    loss: LossKind,
) -> Result<ParameterSet> {
    check_steps(steps)?;
    let class_emb = model.encode_text(&class_prompts(template, class_names))?;
    adapt_with_embeddings(model, images, &class_emb, model.ln_parameters(), steps, lr, loss, true)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn adapt_with_embeddings(
    model: &ClipModel,
    images: &ImageBatch,
    class_emb: &Tensor,
    start: ParameterSet,
    steps: usize,
    lr: f64,
    loss: LossKind,
    refresh: bool,
) -> Result<ParameterSet> {
    check_steps(steps)?;
    let mut a = LnAdapter::new(model, images, start, lr, loss, refresh)?;
    for _ in 0..steps {
        a.step(class_emb)?;
    }
    Ok(a.into_params())
}

/// Elementwise mean of congruent parameter sets, accumulated as a running
/// mean in list order so equal inputs reproduce their value exactly.
pub fn average_parameters(sets: &[ParameterSet]) -> Result<ParameterSet> {
    let (first, rest) = sets
        .split_first()
        .ok_or_else(|| WattError::invalid("cannot average an empty list of parameter sets"))?;
    for s in rest {
        first.check_congruent(s)?;
    }
    let mut acc = first.clone();
    for (k, s) in rest.iter().enumerate() {
        let n = (k + 2) as f64;
        for ((_, a), (_, x)) in acc.iter_mut().zip(s.iter()) {
            for (ai, &xi) in a.data_mut().iter_mut().zip(x.data()) {
                *ai += (xi - *ai) / n;
            }
        }
    }
    Ok(acc)
}

/// Mean of the class-probability matrices of the model under each LN set.
pub fn average_outputs(
    model: &ClipModel,
    ln_sets: &[ParameterSet],
    images: &ImageBatch,
    class_emb: &Tensor,
) -> Result<Tensor> {
    if ln_sets.is_empty() {
        return Err(WattError::invalid("output averaging needs at least one branch"));
    }
    let probs = ln_sets
        .iter()
        .map(|ln| {
            let m = model.with_parameters(ln)?;
            classify_embeddings(&m.encode_image(images)?, class_emb, model.tau())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_tensors(&probs))
}

/// Result of the parallel schedule, with the branch parameters of the last
/// round before they were averaged.
pub struct ParallelOutcome {
    pub params: ParameterSet,
    pub last_branches: Vec<ParameterSet>,
}

/// Parallel schedule: every round, each template adapts its own copy of the
/// current average for `L` steps with a fresh optimizer; the copies are then averaged.
pub fn watt_parallel(
    model: &ClipModel,
    images: &ImageBatch,
    bank: &TextBank,
    cfg: &MtwaConfig,
) -> Result<ParameterSet> {
    Ok(watt_parallel_outcome(model, images, bank, cfg)?.params)
}

pub fn watt_parallel_outcome(
    model: &ClipModel,
    images: &ImageBatch,
    bank: &TextBank,
    cfg: &MtwaConfig,
) -> Result<ParallelOutcome> {
    cfg.validate()?;
    if bank.is_empty() {
        return Err(WattError::invalid("weight averaging needs at least one template"));
    }
    let mut avg = model.ln_parameters();
    let mut branches = Vec::new();
    for _ in 0..cfg.rounds {
        branches = (0..bank.len())
            .into_par_iter()
            .map(|h| {
                adapt_with_embeddings(
                    model,
                    images,
                    bank.embedding(h),
                    avg.clone(),
                    cfg.inner_steps,
                    cfg.lr,
                    cfg.loss,
                    cfg.refresh_pseudo_labels,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        avg = average_parameters(&branches)?;
    }
    Ok(ParallelOutcome {
        params: avg,
        last_branches: branches,
    })
}

/// One round of the sequential schedule as executed.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundTrace {
    pub start: ParameterSet,
    /// Template indices in visit order.
    pub order: Vec<usize>,
    /// Live parameters after each visit, in visit order.
    pub snapshots: Vec<ParameterSet>,
    pub average: ParameterSet,
}

/// Sequential schedule: every round starts the live model at the current
/// average, visits the templates in order, adapting in place for `L` steps
/// each under one optimizer, and averages the per-template snapshots.
pub fn watt_sequential(
    model: &ClipModel,
    images: &ImageBatch,
    bank: &TextBank,
    cfg: &MtwaConfig,
) -> Result<ParameterSet> {
    Ok(watt_sequential_trace(model, images, bank, cfg)?.0)
}

pub fn watt_sequential_trace(
    model: &ClipModel,
    images: &ImageBatch,
    bank: &TextBank,
    cfg: &MtwaConfig,
) -> Result<(ParameterSet, Vec<RoundTrace>)> {
    cfg.validate()?;
    let h = bank.len();
    if h == 0 {
        return Err(WattError::invalid("weight averaging needs at least one template"));
    }
    let order_seed = derive_seed(cfg.seed, "adapt/template-order");
    let mut avg = model.ln_parameters();
    let mut trace = Vec::with_capacity(cfg.rounds);
    for m in 0..cfg.rounds {
        let mut order: Vec<usize> = (0..h).collect();
        if cfg.shuffle_templates {
            order.shuffle(&mut rng(derive_index(order_seed, m as u64)));
        }
        let mut adapter = LnAdapter::new(model, images, avg.clone(), cfg.lr, cfg.loss, cfg.refresh_pseudo_labels)?;
        let mut by_template: Vec<Option<ParameterSet>> = vec![None; h];
        let mut snapshots = Vec::with_capacity(h);
        for &t in &order {
            adapter.begin_template();
            for _ in 0..cfg.inner_steps {
                adapter.step(bank.embedding(t))?;
            }
            by_template[t] = Some(adapter.params().clone());
            snapshots.push(adapter.params().clone());
        }
        let ordered: Vec<ParameterSet> = by_template
            .into_iter()
            .map(|s| s.expect("every template visited"))
            .collect();
        let next = average_parameters(&ordered)?;
        trace.push(RoundTrace {
            start: avg,
            order,
            snapshots,
            average: next.clone(),
        });
        avg = next;
    }
    Ok((avg, trace))
}

/// Runs the schedule selected by `cfg.mode`.
pub fn watt(model: &ClipModel, images: &ImageBatch, bank: &TextBank, cfg: &MtwaConfig) -> Result<ParameterSet> {
    match cfg.mode {
        MtwaMode::Parallel => watt_parallel(model, images, bank, cfg),
        MtwaMode::Sequential => watt_sequential(model, images, bank, cfg),
    }
}
