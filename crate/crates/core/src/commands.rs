//! The subcommands of the `watt` binary, callable as library functions.
//!
//! Each command writes into its own directory under `output_dir` and
//! finishes with a `manifest.json` naming the files it wrote, next to a
//! `config.toml` snapshot that re-runs the command unchanged. Every file is
//! written to a temp name and renamed into place.

use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use crate::adapt::{adapt_single_template, LossKind, TemplateSet, TextBank};
use crate::config::RunConfig;
use crate::data::Dataset;
use crate::error::{Result, WattError};
use crate::eval::{
    evaluate_with_params, run_sweep, shifted_test_split, template_table, write_template_table_csv, ExperimentResult,
    Method, SweepOutcome, TemplateTable,
};
use crate::io::{atomic_write, atomic_write_json};
use crate::landscape::{build_plane, evaluate_grid, plane_mean, write_landscape, LandscapeGrid};
use crate::model::{load_checkpoint_for, save_checkpoint, Checkpoint, ClipModel, Provenance};
use crate::pretrain::{pretrain, PretrainMetrics};
use crate::verify::{run_verification, VerifyReport};

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    library_version: &'a str,
    config: &'a RunConfig,
    outputs: Vec<String>,
}

/// Writes `config.toml` and `manifest.json` into `dir`.
fn finish(cfg: &RunConfig, command: &str, dir: &Path, outputs: &[PathBuf]) -> Result<()> {
    atomic_write(&dir.join("config.toml"), cfg.to_toml_string()?.as_bytes())?;
    let outputs = outputs
        .iter()
        .map(|p| p.strip_prefix(&cfg.output_dir).unwrap_or(p).display().to_string())
        .collect();
    atomic_write_json(
        &dir.join("manifest.json"),
        &Manifest {
            command,
            library_version: crate::VERSION,
            config: cfg,
            outputs,
        },
    )
}

fn load_pretrained(cfg: &RunConfig) -> Result<(ClipModel, Checkpoint)> {
    let path = cfg.checkpoint_path();
    if !path.exists() {
        return Err(WattError::Checkpoint {
            path,
            reason: "not found; run `watt pretrain` with the same config first".into(),
        });
    }
    let ckpt = load_checkpoint_for(&path, &cfg.model)?;
    if ckpt.provenance.seed != cfg.pretrain_seed() {
        warn!(
            "checkpoint {} was pretrained from a different root seed than this config",
            path.display()
        );
    }
    Ok((ckpt.to_model()?, ckpt))
}

fn dataset(cfg: &RunConfig) -> Result<Dataset> {
    let d = cfg.load_dataset()?;
    info!("dataset {}: {} train, {} test", d.name, d.train.len(), d.test.len());
    Ok(d)
}

#[derive(Serialize)]
struct PretrainReport<'a> {
    library_version: &'a str,
    checkpoint: String,
    metrics: &'a PretrainMetrics,
}

/// Pretrains from scratch and writes the checkpoint; returns its path.
pub fn cmd_pretrain(cfg: &RunConfig) -> Result<PathBuf> {
    let data = dataset(cfg)?;
    let mut model = ClipModel::init(cfg.model.clone(), cfg.init_seed())?;
    let mut outcome = pretrain(&mut model, &data, &cfg.pretrain, cfg.pretrain_seed())?;
    outcome.checkpoint.provenance.note = Some(cfg.to_toml_string()?);
    let path = cfg.checkpoint_path();
    save_checkpoint(&path, &outcome.checkpoint)?;
    let dir = cfg.output_dir.join("pretrain");
    let metrics = dir.join("metrics.json");
    atomic_write_json(
        &metrics,
        &PretrainReport {
            library_version: crate::VERSION,
            checkpoint: path.display().to_string(),
            metrics: &outcome.metrics,
        },
    )?;
    finish(cfg, "pretrain", &dir, &[path.clone(), metrics])?;
    Ok(path)
}

fn write_jsonl(path: &Path, rows: &[ExperimentResult]) -> Result<()> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    atomic_write(path, &out)
}

pub struct AdaptOutput {
    pub rows: Vec<ExperimentResult>,
    pub table: Option<TemplateTable>,
}

/// Zero-shot and adapted accuracy for every trial seed on one shift, the
/// LN parameters adapted on the last batch of the first seed as a
/// checkpoint, and optionally the per-template table.
pub fn cmd_adapt(cfg: &RunConfig) -> Result<AdaptOutput> {
    let (model, base) = load_pretrained(cfg)?;
    let data = dataset(cfg)?;
    let a = &cfg.adapt;
    let per_seed = a
        .seeds
        .par_iter()
        .map(|&seed| {
            let zero = evaluate_with_params(&model, &data, a.shift, &a.eval, &Method::ZeroShot, seed)?.0;
            let (adapted, ln) = evaluate_with_params(&model, &data, a.shift, &a.eval, &a.method, seed)?;
            info!(
                "{} seed {seed}: zero-shot {:.4} -> {} {:.4}",
                a.shift, zero.accuracy, adapted.method, adapted.accuracy
            );
            Ok((zero, adapted, ln))
        })
        .collect::<Result<Vec<_>>>()?;
    let dir = cfg.output_dir.join("adapt");
    let mut outputs = Vec::new();
    let rows: Vec<ExperimentResult> = per_seed.iter().flat_map(|(z, r, _)| [z.clone(), r.clone()]).collect();
    let results = dir.join("results.jsonl");
    write_jsonl(&results, &rows)?;
    outputs.push(results);

    let ckpt_path = dir.join("adapted.ckpt");
    let adapted = model.with_parameters(&per_seed[0].2)?;
    let mut prov = Provenance::new(base.provenance.seed, base.provenance.pretrain_epochs, None);
    prov.note = Some(cfg.to_toml_string()?);
    save_checkpoint(&ckpt_path, &Checkpoint::from_model(&adapted, prov))?;
    outputs.push(ckpt_path);

    let table = match &a.table {
        Some(t) => {
            let table = template_table(&model, &data, a.shift, &a.eval, t.steps, t.lr, &a.seeds)?;
            let csv = dir.join("table1.csv");
            write_template_table_csv(&table, &csv)?;
            let json = dir.join("table1.json");
            atomic_write_json(&json, &table)?;
            outputs.extend([csv, json]);
            Some(table)
        }
        None => None,
    };
    finish(cfg, "adapt", &dir, &outputs)?;
    Ok(AdaptOutput { rows, table })
}

/// Runs the configured sweep; resumes from an interrupted run in the same
/// directory.
pub fn cmd_sweep(cfg: &RunConfig) -> Result<SweepOutcome> {
    let (model, _) = load_pretrained(cfg)?;
    let data = dataset(cfg)?;
    let dir = cfg.output_dir.join("sweep");
    let out = run_sweep(&model, &data, &cfg.sweep, Some(&dir))?;
    let outputs = ["results.jsonl", "summary.csv", "sweep_manifest.json"].map(|f| dir.join(f));
    finish(cfg, "sweep", &dir, &outputs)?;
    Ok(out)
}

/// Adapts three copies of the pretrained model with one template each on a
/// single corrupted batch and evaluates the plane through them.
pub fn cmd_landscape(cfg: &RunConfig) -> Result<LandscapeGrid> {
    let (model, _) = load_pretrained(cfg)?;
    let data = dataset(cfg)?;
    let l = &cfg.landscape;
    let batch = shifted_test_split(&data, l.shift, Some(l.batch_size), l.seed)?;
    let templates = TemplateSet::default_set().select(&l.templates)?;
    let ws = templates
        .iter()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|t| {
            adapt_single_template(
                &model,
                &batch.images,
                t,
                &data.class_names,
                l.steps,
                l.lr,
                LossKind::TransductiveCe,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let plane = build_plane(&ws[0], &ws[1], &ws[2])?;
    let emb = TextBank::new(&model, &templates, &data.class_names)?.ensemble();
    let grid = evaluate_grid(&plane, &l.grid, &model, &batch.images, &batch.labels, &emb)?;
    for m in &grid.marked {
        info!(
            "{}: ({:.4}, {:.4}) loss {:.5} error {:.4}",
            m.name, m.x, m.y, m.loss, m.error
        );
    }
    let dir = cfg.output_dir.join("landscape");
    let (csv, json) = (dir.join("grid.csv"), dir.join("grid.json"));
    let snapshot = serde_json::to_value(cfg)?;
    write_landscape(
        &grid,
        &plane,
        &plane_mean(&ws[0], &ws[1], &ws[2])?,
        &csv,
        &json,
        &snapshot,
    )?;
    finish(cfg, "landscape", &dir, &[csv, json])?;
    Ok(grid)
}

/// Runs the self-check suite and writes its report. Failed checks are part
/// of the returned report, not an error.
pub fn cmd_verify(cfg: &RunConfig) -> Result<VerifyReport> {
    let report = run_verification(cfg.seed);
    let dir = cfg.output_dir.join("verify");
    let path = dir.join("report.json");
    atomic_write_json(&path, &report)?;
    finish(cfg, "verify", &dir, &[path])?;
    Ok(report)
}
