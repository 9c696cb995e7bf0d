//! Evaluation heads, episodic test-time evaluation and ablation sweeps.

mod sweep;
mod table;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use sweep::{pivot_csv, random_templates, run_sweep, Strategy, SweepAxis, SweepConfig, SweepOutcome};
pub(crate) use table::csv_err;
pub use table::{template_table, write_template_table_csv, TemplateTable};

use crate::adapt::{
    average_outputs, classify_embeddings, watt, watt_parallel_outcome, LnAdapter, LossKind, MtwaConfig, MtwaMode,
    TemplateSet, TextBank, DEFAULT_TEMPLATES,
};
use crate::autodiff::Tensor;
use crate::data::{apply_corruption, batch_iter, Corruption, CorruptionKind, Dataset, ImageBatch, LabeledImages};
use crate::error::{Result, WattError};
use crate::model::{ClipModel, ParameterSet};
use crate::ops::argmax_rows;
use crate::seed::{derive_index, derive_seed};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalHead {
    /// Class prompts of the first default template only.
    SingleTemp,
    /// Mean of the class-prompt embeddings over the template set.
    TextAvg,
}

/// The test condition: clean data or one corruption at one severity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Shift {
    Clean,
    Corrupted(Corruption),
}

impl Shift {
    pub fn id(&self) -> String {
        match self {
            Shift::Clean => "clean".into(),
            Shift::Corrupted(c) => c.id(),
        }
    }

    pub fn severity(&self) -> u8 {
        match self {
            Shift::Clean => 0,
            Shift::Corrupted(c) => c.severity,
        }
    }

    /// The shifted test images. Noise draws depend on `seed`.
    pub fn apply(&self, images: &ImageBatch, seed: u64) -> Result<ImageBatch> {
        match self {
            Shift::Clean => Ok(images.clone()),
            Shift::Corrupted(c) => apply_corruption(images, *c, derive_seed(seed, &format!("corruption/{}", c.id()))),
        }
    }

    /// Every corruption kind at one severity.
    pub fn all_at(severity: u8) -> Result<Vec<Shift>> {
        CorruptionKind::ALL
            .into_iter()
            .map(|k| Corruption::new(k, severity).map(Shift::Corrupted))
            .collect()
    }
}

impl fmt::Display for Shift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

impl FromStr for Shift {
    type Err = WattError;

    /// `clean` or `<kind>-<severity>`, e.g. `gaussian_noise-3`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "clean" {
            return Ok(Shift::Clean);
        }
        let (kind, sev) = s
            .rsplit_once('-')
            .ok_or_else(|| WattError::invalid(format!("`{s}` is not `clean` or `<kind>-<severity>`")))?;
        let sev: u8 = sev
            .parse()
            .map_err(|_| WattError::invalid(format!("bad severity in `{s}`")))?;
        Ok(Shift::Corrupted(Corruption::new(kind.parse()?, sev)?))
    }
}

impl Serialize for Shift {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.id())
    }
}

impl<'de> Deserialize<'de> for Shift {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub head: EvalHead,
    pub templates: TemplateSet,
    pub batch_size: usize,
    /// Evaluate only the first `n` test samples (the splits are class-balanced in order).
    pub max_samples: Option<usize>,
    /// Carry adapted parameters across batches instead of resetting to the
    /// pretrained model before each batch.
    pub continual: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            head: EvalHead::TextAvg,
            templates: TemplateSet::default_set(),
            batch_size: 128,
            max_samples: None,
            continual: false,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(WattError::invalid("eval batch_size must be at least 1"));
        }
        if self.max_samples == Some(0) {
            return Err(WattError::invalid("max_samples must be at least 1"));
        }
        Ok(())
    }
}

/// How test batches are predicted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Method {
    /// No adaptation.
    ZeroShot,
    /// One adaptation chain whose pseudo-labels use the template-averaged
    /// class embeddings; no branches.
    TextAvgOnly { steps: usize, lr: f64 },
    /// Multi-template weight averaging.
    Watt(MtwaConfig),
    /// Parallel branches of the given schedule; their class probabilities from
    /// the last round are averaged instead of their weights.
    OutputAvg(MtwaConfig),
    /// Adaptation with one template for `steps` steps.
    SingleTemplate {
        template: String,
        steps: usize,
        lr: f64,
        loss: LossKind,
    },
}

impl Method {
    pub fn id(&self) -> String {
        match self {
            Method::ZeroShot => "zero_shot".into(),
            Method::TextAvgOnly { steps, .. } => format!("text_avg_only(steps={steps})"),
            Method::Watt(c) => {
                let tag = match c.mode {
                    MtwaMode::Parallel => "watt_p",
                    MtwaMode::Sequential => "watt_s",
                };
                format!("{tag}(L={},M={})", c.inner_steps, c.rounds)
            }
            Method::OutputAvg(c) => format!("output_avg(L={},M={})", c.inner_steps, c.rounds),
            Method::SingleTemplate { template, steps, .. } => format!("single[{template}](steps={steps})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub dataset: String,
    pub shift: Shift,
    pub severity: u8,
    pub method: String,
    /// Sweep grid point, when produced by a sweep.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub seed: u64,
    pub accuracy: f64,
    pub per_class_accuracy: Vec<f64>,
    pub class_counts: Vec<usize>,
    pub num_samples: usize,
    pub wall_clock_seconds: f64,
    pub library_version: String,
    pub config: serde_json::Value,
}

/// Per-class mean of the template embeddings; not re-normalized.
pub fn ensemble_text_embedding(model: &ClipModel, templates: &TemplateSet, class_names: &[String]) -> Result<Tensor> {
    Ok(TextBank::new(model, templates, class_names)?.ensemble())
}

/// Class embeddings used for prediction under `head`.
pub fn head_embedding(model: &ClipModel, bank: &TextBank, head: EvalHead) -> Result<Tensor> {
    match head {
        EvalHead::TextAvg => Ok(bank.ensemble()),
        EvalHead::SingleTemp => {
            let t0 = TemplateSet::new(vec![DEFAULT_TEMPLATES[0].to_string()])?;
            Ok(TextBank::new(model, &t0, bank.class_names())?.embedding(0).clone())
        }
    }
}

/// Prediction state shared by all batches of one evaluation.
struct Predictor<'a> {
    model: &'a ClipModel,
    bank: &'a TextBank,
    head: Tensor,
    method: &'a Method,
    single: Option<Tensor>,
}

impl<'a> Predictor<'a> {
    fn new(model: &'a ClipModel, bank: &'a TextBank, head: Tensor, method: &'a Method) -> Result<Self> {
        let single = match method {
            Method::SingleTemplate { template, .. } => {
                let t = TemplateSet::new(vec![template.clone()])?;
                Some(TextBank::new(model, &t, bank.class_names())?.embedding(0).clone())
            }
            _ => None,
        };
        Ok(Predictor {
            model,
            bank,
            head,
            method,
            single,
        })
    }

    /// Class probabilities for one batch, adapting from the LN parameters
    /// `start`; also returns the adapted LN parameters.
    fn predict(&self, images: &ImageBatch, start: &ParameterSet, seed: u64) -> Result<(Tensor, ParameterSet)> {
        let base;
        let model = if start.bit_eq(&self.model.ln_parameters()) {
            self.model
        } else {
            base = self.model.with_parameters(start)?;
            &base
        };
        let tau = model.tau();
        let classify_with = |ln: &ParameterSet| -> Result<Tensor> {
            let m = model.with_parameters(ln)?;
            classify_embeddings(&m.encode_image(images)?, &self.head, tau)
        };
        match self.method {
            Method::ZeroShot => Ok((
                classify_embeddings(&model.encode_image(images)?, &self.head, tau)?,
                start.clone(),
            )),
            Method::TextAvgOnly { steps, lr } => {
                let ln = chain(
                    model,
                    images,
                    &self.bank.ensemble(),
                    *steps,
                    *lr,
                    LossKind::TransductiveCe,
                )?;
                Ok((classify_with(&ln)?, ln))
            }
            Method::Watt(cfg) => {
                let cfg = MtwaConfig { seed, ..cfg.clone() };
                let ln = watt(model, images, self.bank, &cfg)?;
                Ok((classify_with(&ln)?, ln))
            }
            Method::OutputAvg(cfg) => {
                let cfg = MtwaConfig {
                    seed,
                    mode: MtwaMode::Parallel,
                    ..cfg.clone()
                };
                let out = watt_parallel_outcome(model, images, self.bank, &cfg)?;
                let p = average_outputs(model, &out.last_branches, images, &self.head)?;
                Ok((p, out.params))
            }
            Method::SingleTemplate { steps, lr, loss, .. } => {
                let ln = chain(
                    model,
                    images,
                    self.single.as_ref().expect("built in new"),
                    *steps,
                    *lr,
                    *loss,
                )?;
                Ok((classify_with(&ln)?, ln))
            }
        }
    }
}

fn chain(
    model: &ClipModel,
    images: &ImageBatch,
    class_emb: &Tensor,
    steps: usize,
    lr: f64,
    loss: LossKind,
) -> Result<ParameterSet> {
    if steps == 0 {
        return Err(WattError::invalid("adaptation needs at least one step"));
    }
    let mut a = LnAdapter::new(model, images, model.ln_parameters(), lr, loss, true)?;
    for _ in 0..steps {
        a.step(class_emb)?;
    }
    Ok(a.into_params())
}

/// Shifted, truncated test split for one seed.
pub fn shifted_test_split(
    dataset: &Dataset,
    shift: Shift,
    max_samples: Option<usize>,
    seed: u64,
) -> Result<LabeledImages> {
    let test = match max_samples {
        Some(n) => dataset.test.head(n),
        None => dataset.test.clone(),
    };
    let images = shift.apply(&test.images, seed)?;
    LabeledImages::new(test.split, images, test.labels)
}

/// Episodic evaluation of `method` on the shifted test split: every batch is
/// adapted from the pretrained parameters (unless `cfg.continual`).
pub fn evaluate(
    model: &ClipModel,
    dataset: &Dataset,
    shift: Shift,
    cfg: &EvalConfig,
    method: &Method,
    seed: u64,
) -> Result<ExperimentResult> {
    Ok(evaluate_with_params(model, dataset, shift, cfg, method, seed)?.0)
}

/// Like [`evaluate`], also returning the LN parameters adapted on the last batch.
pub fn evaluate_with_params(
    model: &ClipModel,
    dataset: &Dataset,
    shift: Shift,
    cfg: &EvalConfig,
    method: &Method,
    seed: u64,
) -> Result<(ExperimentResult, ParameterSet)> {
    cfg.validate()?;
    let started = Instant::now();
    let k = dataset.num_classes();
    let test = shifted_test_split(dataset, shift, cfg.max_samples, seed)?;
    let batches = batch_iter(&test, cfg.batch_size, derive_seed(seed, "eval/batches"), false)?;
    let bank = TextBank::new(model, &cfg.templates, &dataset.class_names)?;
    let head = head_embedding(model, &bank, cfg.head)?;
    let predictor = Predictor::new(model, &bank, head, method)?;
    let adapt_seed = derive_seed(seed, "adapt");
    let pretrained = model.ln_parameters();
    let mut ln = pretrained.clone();
    let mut last = pretrained.clone();
    let mut correct = vec![0usize; k];
    let mut counts = vec![0usize; k];
    for (i, batch) in batches.iter().enumerate() {
        let start = if cfg.continual { &ln } else { &pretrained };
        let (probs, adapted) = predictor.predict(&batch.images, start, derive_index(adapt_seed, i as u64))?;
        if cfg.continual {
            ln = adapted.clone();
        }
        last = adapted;
        let labels = batch.labels().expect("test batches carry labels");
        for (p, &l) in argmax_rows(&probs)?.into_iter().zip(labels) {
            counts[l] += 1;
            if p == l {
                correct[l] += 1;
            }
        }
    }
    let total: usize = counts.iter().sum();
    let accuracy = correct.iter().sum::<usize>() as f64 / total as f64;
    let per_class_accuracy = correct
        .iter()
        .zip(&counts)
        .map(|(&c, &n)| if n == 0 { 0.0 } else { c as f64 / n as f64 })
        .collect();
    let result = ExperimentResult {
        dataset: dataset.name.clone(),
        shift,
        severity: shift.severity(),
        method: method.id(),
        label: None,
        seed,
        accuracy,
        per_class_accuracy,
        class_counts: counts,
        num_samples: total,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        library_version: crate::VERSION.to_string(),
        config: serde_json::json!({ "eval": cfg, "method": method, "shift": shift, "seed": seed }),
    };
    Ok((result, last))
}
