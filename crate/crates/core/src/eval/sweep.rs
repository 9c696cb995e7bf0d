//! Ablation sweeps over one axis, with rows persisted as they finish.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;

use indexmap::IndexMap;
use log::info;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::table::csv_err;
use super::{evaluate, EvalConfig, ExperimentResult, Method, Shift};
use crate::adapt::{MtwaConfig, MtwaMode, TemplateSet, DEFAULT_TEMPLATES};
use crate::data::{Corruption, CorruptionKind, Dataset};
use crate::error::{Result, WattError};
use crate::io::{atomic_write, atomic_write_json};
use crate::model::ClipModel;
use crate::seed::{derive_seed, rng};

pub const RESULTS_FILE: &str = "results.jsonl";
pub const PARTIAL_FILE: &str = "results.partial.jsonl";
pub const MANIFEST_FILE: &str = "sweep_manifest.json";
pub const SUMMARY_FILE: &str = "summary.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    BatchSize,
    TemplateCount,
    Schedule,
    Strategy,
    Corruption,
}

/// Ensemble strategies compared by the `strategy` axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    TextAvgOnly,
    OutputAvg,
    WeightAvg { l: usize, m: usize },
}

impl Strategy {
    pub fn label(&self) -> String {
        match self {
            Strategy::TextAvgOnly => "text_avg_only".into(),
            Strategy::OutputAvg => "output_avg".into(),
            Strategy::WeightAvg { l, m } => format!("weight_avg({l}x{m})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub batch_sizes: Vec<usize>,
    pub template_counts: Vec<usize>,
    /// `[L, M]` pairs.
    pub schedules: Vec<[usize; 2]>,
    pub strategies: Vec<Strategy>,
    pub shifts: Vec<Shift>,
    pub seeds: Vec<u64>,
    pub eval: EvalConfig,
    pub method: MtwaConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            axis: SweepAxis::BatchSize,
            batch_sizes: vec![1, 2, 4, 8, 16, 32, 64, 128],
            template_counts: (1..=8).collect(),
            schedules: vec![[10, 1], [1, 10], [2, 5]],
            strategies: vec![
                Strategy::TextAvgOnly,
                Strategy::OutputAvg,
                Strategy::WeightAvg { l: 10, m: 1 },
                Strategy::WeightAvg { l: 1, m: 10 },
                Strategy::WeightAvg { l: 2, m: 5 },
            ],
            shifts: vec![Shift::Corrupted(Corruption {
                kind: CorruptionKind::GaussianNoise,
                severity: 3,
            })],
            seeds: vec![0, 1, 2],
            eval: EvalConfig::default(),
            method: MtwaConfig::default(),
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        self.eval.validate()?;
        self.method.validate()?;
        if self.seeds.is_empty() {
            return Err(WattError::invalid("sweep needs at least one seed"));
        }
        if self.shifts.is_empty() {
            return Err(WattError::invalid("sweep needs at least one shift"));
        }
        let empty = match self.axis {
            SweepAxis::BatchSize => self.batch_sizes.is_empty(),
            SweepAxis::TemplateCount => self.template_counts.is_empty(),
            SweepAxis::Schedule => self.schedules.is_empty(),
            SweepAxis::Strategy => self.strategies.is_empty(),
            SweepAxis::Corruption => false,
        };
        if empty {
            return Err(WattError::invalid(format!(
                "sweep grid for axis {:?} is empty",
                self.axis
            )));
        }
        if self.batch_sizes.contains(&0) {
            return Err(WattError::invalid("batch sizes must be at least 1"));
        }
        if let Some(t) = self
            .template_counts
            .iter()
            .find(|&&t| t == 0 || t > DEFAULT_TEMPLATES.len())
        {
            return Err(WattError::invalid(format!("template count {t} outside 1..=8")));
        }
        if self.schedules.iter().any(|s| s[0] == 0 || s[1] == 0) {
            return Err(WattError::invalid("schedules need L >= 1 and M >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Job {
    key: String,
    label: String,
    shift: Shift,
    seed: u64,
    eval: EvalConfig,
    method: Method,
}

/// The templates used by a `template_count` grid point: `count` of the eight
/// defaults chosen uniformly at random per seed, kept in table order.
pub fn random_templates(count: usize, seed: u64) -> Result<TemplateSet> {
    let mut idx: Vec<usize> = (0..DEFAULT_TEMPLATES.len()).collect();
    idx.shuffle(&mut rng(derive_seed(seed, &format!("sweep/templates/{count}"))));
    let mut chosen = idx[..count].to_vec();
    chosen.sort_unstable();
    TemplateSet::new(chosen.into_iter().map(|i| DEFAULT_TEMPLATES[i].to_string()).collect())
}

fn grid_points(cfg: &SweepConfig, seed: u64) -> Result<Vec<(String, EvalConfig, Method)>> {
    let base = &cfg.method;
    let watt = |l: usize, m: usize| {
        Method::Watt(MtwaConfig {
            inner_steps: l,
            rounds: m,
            ..base.clone()
        })
    };
    Ok(match cfg.axis {
        SweepAxis::BatchSize => cfg
            .batch_sizes
            .iter()
            .map(|&b| {
                let eval = EvalConfig {
                    batch_size: b,
                    ..cfg.eval.clone()
                };
                (format!("batch_size={b}"), eval, Method::Watt(base.clone()))
            })
            .collect(),
        SweepAxis::TemplateCount => cfg
            .template_counts
            .iter()
            .map(|&t| {
                let eval = EvalConfig {
                    templates: random_templates(t, seed)?,
                    ..cfg.eval.clone()
                };
                Ok((format!("templates={t}"), eval, Method::Watt(base.clone())))
            })
            .collect::<Result<_>>()?,
        SweepAxis::Schedule => cfg
            .schedules
            .iter()
            .map(|&[l, m]| (format!("L={l},M={m}"), cfg.eval.clone(), watt(l, m)))
            .collect(),
        SweepAxis::Strategy => cfg
            .strategies
            .iter()
            .map(|s| {
                let method = match *s {
                    Strategy::TextAvgOnly => Method::TextAvgOnly {
                        steps: base.inner_steps * base.rounds,
                        lr: base.lr,
                    },
                    Strategy::OutputAvg => Method::OutputAvg(MtwaConfig {
                        mode: MtwaMode::Parallel,
                        inner_steps: base.inner_steps * base.rounds,
                        rounds: 1,
                        ..base.clone()
                    }),
                    Strategy::WeightAvg { l, m } => watt(l, m),
                };
                (s.label(), cfg.eval.clone(), method)
            })
            .collect(),
        SweepAxis::Corruption => vec![("base".into(), cfg.eval.clone(), Method::Watt(base.clone()))],
    })
}

fn jobs(cfg: &SweepConfig) -> Result<Vec<Job>> {
    let mut out = Vec::new();
    // Seeds vary innermost so rows of one grid point sit together.
    let first = grid_points(cfg, cfg.seeds[0])?;
    for (g, (label, _, _)) in first.iter().enumerate() {
        for &shift in &cfg.shifts {
            for &seed in &cfg.seeds {
                let (_, eval, method) = grid_points(cfg, seed)?.swap_remove(g);
                out.push(Job {
                    key: format!("{label}|{shift}|{seed}"),
                    label: label.clone(),
                    shift,
                    seed,
                    eval,
                    method,
                });
            }
        }
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    library_version: String,
    config: SweepConfig,
    total: usize,
    completed: Vec<String>,
    complete: bool,
}

pub struct SweepOutcome {
    /// One row per (grid point, shift, seed), in grid order.
    pub rows: Vec<ExperimentResult>,
    /// Rows recovered from an interrupted earlier run.
    pub resumed: usize,
}

fn row_key(r: &ExperimentResult) -> String {
    format!("{}|{}|{}", r.label.as_deref().unwrap_or(""), r.shift, r.seed)
}

/// Runs every grid point for every shift and seed. With `out_dir`, rows are
/// appended to a partial JSONL file as they finish and a manifest tracks
/// completed keys, so an interrupted sweep resumes where it stopped; the
/// final `results.jsonl` and `summary.csv` are written in grid order.
pub fn run_sweep(
    model: &ClipModel,
    dataset: &Dataset,
    cfg: &SweepConfig,
    out_dir: Option<&Path>,
) -> Result<SweepOutcome> {
    cfg.validate()?;
    let jobs = jobs(cfg)?;
    let mut done: IndexMap<String, ExperimentResult> = IndexMap::new();
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        done = resume_rows(dir, cfg)?;
    }
    let resumed = done.len();
    let pending: Vec<&Job> = jobs.iter().filter(|j| !done.contains_key(&j.key)).collect();
    info!("sweep: {} jobs, {} resumed", jobs.len(), resumed);

    let sink = match out_dir {
        Some(dir) => {
            write_manifest(dir, cfg, jobs.len(), done.keys().cloned().collect(), false)?;
            let f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(dir.join(PARTIAL_FILE))?;
            Some(Mutex::new((f, done.keys().cloned().collect::<Vec<_>>())))
        }
        None => None,
    };
    let fresh: Vec<ExperimentResult> = pending
        .par_iter()
        .map(|job| {
            let mut row = evaluate(model, dataset, job.shift, &job.eval, &job.method, job.seed)?;
            row.label = Some(job.label.clone());
            if let (Some(sink), Some(dir)) = (&sink, out_dir) {
                let mut guard = sink.lock().expect("sweep sink poisoned");
                let (file, keys) = &mut *guard;
                writeln!(file, "{}", serde_json::to_string(&row)?)?;
                file.flush()?;
                keys.push(job.key.clone());
                write_manifest(dir, cfg, jobs.len(), keys.clone(), false)?;
            }
            info!("sweep row {} accuracy {:.4}", job.key, row.accuracy);
            Ok(row)
        })
        .collect::<Result<_>>()?;
    for row in fresh {
        done.insert(row_key(&row), row);
    }
    let rows: Vec<ExperimentResult> = jobs
        .iter()
        .map(|j| done.shift_remove(&j.key).expect("every job has a row"))
        .collect();
    if let Some(dir) = out_dir {
        let mut body = String::new();
        for r in &rows {
            body.push_str(&serde_json::to_string(r)?);
            body.push('\n');
        }
        atomic_write(&dir.join(RESULTS_FILE), body.as_bytes())?;
        atomic_write(&dir.join(SUMMARY_FILE), pivot_csv(&rows)?.as_bytes())?;
        write_manifest(dir, cfg, jobs.len(), jobs.iter().map(|j| j.key.clone()).collect(), true)?;
        let _ = fs::remove_file(dir.join(PARTIAL_FILE));
    }
    Ok(SweepOutcome { rows, resumed })
}

fn write_manifest(dir: &Path, cfg: &SweepConfig, total: usize, completed: Vec<String>, complete: bool) -> Result<()> {
    atomic_write_json(
        &dir.join(MANIFEST_FILE),
        &Manifest {
            library_version: crate::VERSION.to_string(),
            config: cfg.clone(),
            total,
            completed,
            complete,
        },
    )
}

/// Rows of an interrupted run of the same config; nothing if the config changed.
fn resume_rows(dir: &Path, cfg: &SweepConfig) -> Result<IndexMap<String, ExperimentResult>> {
    let mut out = IndexMap::new();
    let manifest_path = dir.join(MANIFEST_FILE);
    let partial = dir.join(PARTIAL_FILE);
    if !manifest_path.exists() || !partial.exists() {
        let _ = fs::remove_file(&partial);
        return Ok(out);
    }
    let manifest: Manifest = serde_json::from_slice(&fs::read(&manifest_path)?)?;
    if manifest.config != *cfg || manifest.complete {
        fs::remove_file(&partial)?;
        return Ok(out);
    }
    for line in BufReader::new(File::open(&partial)?).lines() {
        let line = line?;
        // A torn final line from an interrupted write is dropped and rerun.
        if let Ok(row) = serde_json::from_str::<ExperimentResult>(&line) {
            let key = row_key(&row);
            if manifest.completed.contains(&key) {
                out.insert(key, row);
            }
        }
    }
    // Rewrite the partial file with only the rows kept.
    let mut body = String::new();
    for r in out.values() {
        body.push_str(&serde_json::to_string(r)?);
        body.push('\n');
    }
    atomic_write(&partial, body.as_bytes())?;
    Ok(out)
}

/// Mean and sample standard deviation over seeds of accuracy (percent),
/// one row per grid point and one column pair per shift.
pub fn pivot_csv(rows: &[ExperimentResult]) -> Result<String> {
    let mut table: IndexMap<String, IndexMap<String, Vec<f64>>> = IndexMap::new();
    let mut shifts: Vec<String> = Vec::new();
    for r in rows {
        let label = r.label.clone().unwrap_or_else(|| r.method.clone());
        let shift = r.shift.id();
        if !shifts.contains(&shift) {
            shifts.push(shift.clone());
        }
        table
            .entry(label)
            .or_default()
            .entry(shift)
            .or_default()
            .push(100.0 * r.accuracy);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["method".to_string()];
    for s in &shifts {
        header.push(s.clone());
        header.push(format!("{s}_std"));
    }
    w.write_record(&header).map_err(csv_err)?;
    for (label, cells) in &table {
        let mut rec = vec![label.clone()];
        for s in &shifts {
            match cells.get(s) {
                Some(v) => {
                    let n = v.len() as f64;
                    let mean = v.iter().sum::<f64>() / n;
                    let std = if v.len() > 1 {
                        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
                    } else {
                        0.0
                    };
                    rec.push(format!("{mean:.2}"));
                    rec.push(format!("{std:.2}"));
                }
                None => {
                    rec.push(String::new());
                    rec.push(String::new());
                }
            }
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| WattError::invalid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_templates_are_seeded_subsets() {
        let a = random_templates(3, 1).unwrap();
        assert_eq!(a, random_templates(3, 1).unwrap());
        assert_eq!(a.len(), 3);
        assert_eq!(random_templates(8, 5).unwrap(), TemplateSet::default_set());
        let picks: std::collections::BTreeSet<String> = (0..40)
            .map(|s| random_templates(1, s).unwrap().get(0).to_string())
            .collect();
        assert!(picks.len() > 4, "single-template picks should vary by seed");
    }

    #[test]
    fn strategy_grid_has_five_points() {
        let cfg = SweepConfig {
            axis: SweepAxis::Strategy,
            seeds: vec![0],
            ..SweepConfig::default()
        };
        let labels: Vec<String> = jobs(&cfg).unwrap().into_iter().map(|j| j.label).collect();
        assert_eq!(
            labels,
            [
                "text_avg_only",
                "output_avg",
                "weight_avg(10x1)",
                "weight_avg(1x10)",
                "weight_avg(2x5)"
            ]
        );
    }

    #[test]
    fn batch_grid_rows_per_seed_and_shift() {
        let cfg = SweepConfig {
            batch_sizes: vec![1, 128],
            shifts: vec![Shift::Clean],
            seeds: vec![0, 1],
            ..SweepConfig::default()
        };
        assert_eq!(jobs(&cfg).unwrap().len(), 4);
    }

    #[test]
    fn invalid_grids_are_rejected() {
        let bad = SweepConfig {
            template_counts: vec![9],
            ..SweepConfig::default()
        };
        assert!(bad.validate().is_err());
        let empty = SweepConfig {
            batch_sizes: vec![],
            ..SweepConfig::default()
        };
        assert!(empty.validate().is_err());
    }
}
