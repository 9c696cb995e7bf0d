//! Per-template adaptation accuracy next to the weight average of the same
//! branches.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{head_embedding, shifted_test_split, EvalConfig, Shift};
use crate::adapt::{classify_embeddings, watt_parallel_outcome, LossKind, MtwaConfig, MtwaMode, TextBank};
use crate::data::{batch_iter, Dataset};
use crate::error::{Result, WattError};
use crate::io::atomic_write;
use crate::model::{ClipModel, ParameterSet};
use crate::ops::argmax_rows;
use crate::seed::{derive_index, derive_seed};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemplateTable {
    pub shift: Shift,
    pub templates: Vec<String>,
    pub seeds: Vec<u64>,
    /// `[seed][template]` accuracies.
    pub per_template: Vec<Vec<f64>>,
    /// Accuracy of the weight-averaged model, per seed.
    pub weight_avg: Vec<f64>,
}

impl TemplateTable {
    /// Mean over seeds of each template's accuracy.
    pub fn template_means(&self) -> Vec<f64> {
        (0..self.templates.len())
            .map(|h| self.per_template.iter().map(|r| r[h]).sum::<f64>() / self.seeds.len() as f64)
            .collect()
    }

    pub fn weight_avg_mean(&self) -> f64 {
        self.weight_avg.iter().sum::<f64>() / self.seeds.len() as f64
    }

    /// Mean over templates of the seed-averaged single-template accuracies.
    pub fn single_template_mean(&self) -> f64 {
        let m = self.template_means();
        m.iter().sum::<f64>() / m.len() as f64
    }
}

/// Adapts each template independently for `steps` steps from the pretrained
/// parameters (one parallel round), and evaluates every branch and their
/// weight average with the `cfg.head` embeddings.
pub fn template_table(
    model: &ClipModel,
    dataset: &Dataset,
    shift: Shift,
    cfg: &EvalConfig,
    steps: usize,
    lr: f64,
    seeds: &[u64],
) -> Result<TemplateTable> {
    cfg.validate()?;
    if seeds.is_empty() {
        return Err(WattError::invalid("template table needs at least one seed"));
    }
    let bank = TextBank::new(model, &cfg.templates, &dataset.class_names)?;
    let head = head_embedding(model, &bank, cfg.head)?;
    let h = bank.len();
    let mcfg = MtwaConfig {
        mode: MtwaMode::Parallel,
        inner_steps: steps,
        rounds: 1,
        lr,
        loss: LossKind::TransductiveCe,
        ..MtwaConfig::default()
    };
    let mut per_template = Vec::with_capacity(seeds.len());
    let mut weight_avg = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let test = shifted_test_split(dataset, shift, cfg.max_samples, seed)?;
        let batches = batch_iter(&test, cfg.batch_size, derive_seed(seed, "eval/batches"), false)?;
        let adapt_seed = derive_seed(seed, "adapt");
        let mut correct = vec![0usize; h + 1];
        let mut total = 0;
        for (i, batch) in batches.iter().enumerate() {
            let c = MtwaConfig {
                seed: derive_index(adapt_seed, i as u64),
                ..mcfg.clone()
            };
            let out = watt_parallel_outcome(model, &batch.images, &bank, &c)?;
            let labels = batch.labels().expect("test batches carry labels");
            let sets: Vec<&ParameterSet> = out.last_branches.iter().chain(std::iter::once(&out.params)).collect();
            for (slot, ln) in sets.into_iter().enumerate() {
                let m = model.with_parameters(ln)?;
                let p = classify_embeddings(&m.encode_image(&batch.images)?, &head, model.tau())?;
                correct[slot] += argmax_rows(&p)?.iter().zip(labels).filter(|(a, b)| a == b).count();
            }
            total += labels.len();
        }
        let acc: Vec<f64> = correct.iter().map(|&c| c as f64 / total as f64).collect();
        per_template.push(acc[..h].to_vec());
        weight_avg.push(acc[h]);
    }
    Ok(TemplateTable {
        shift,
        templates: bank.templates().iter().map(str::to_string).collect(),
        seeds: seeds.to_vec(),
        per_template,
        weight_avg,
    })
}

/// CSV with one column per template (`T0`, `T1`, ...) and a final `WATT`
/// column; one row per seed plus a `mean` row. Accuracies in percent.
pub fn write_template_table_csv(table: &TemplateTable, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["row".to_string()];
    header.extend((0..table.templates.len()).map(|h| format!("T{h}")));
    header.push("WATT".into());
    w.write_record(&header).map_err(csv_err)?;
    let fmt = |v: f64| format!("{:.2}", 100.0 * v);
    for (s, seed) in table.seeds.iter().enumerate() {
        let mut row = vec![format!("{}/seed{seed}", table.shift)];
        row.extend(table.per_template[s].iter().map(|&v| fmt(v)));
        row.push(fmt(table.weight_avg[s]));
        w.write_record(&row).map_err(csv_err)?;
    }
    let mut row = vec![format!("{}/mean", table.shift)];
    row.extend(table.template_means().into_iter().map(fmt));
    row.push(fmt(table.weight_avg_mean()));
    w.write_record(&row).map_err(csv_err)?;
    let bytes = w.into_inner().map_err(|e| WattError::invalid(e.to_string()))?;
    atomic_write(path, &bytes)
}

pub(crate) fn csv_err(e: csv::Error) -> WattError {
    WattError::invalid(format!("csv: {e}"))
}
