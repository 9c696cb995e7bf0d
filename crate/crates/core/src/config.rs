//! Run configuration: one TOML file with a section per command.
//!
//! ```toml
//! seed = 0
//! deterministic = true
//! output_dir = "runs/default"
//! checkpoint = "runs/default/pretrained.ckpt"
//!
//! [data]       # source = "synthetic" | "cifar10", cifar_dir, [data.synthetic]
//! [model]      # encoder sizes and tau
//! [pretrain]   # epochs, batch_size, lr, temperature, caption_template, accuracy_gate
//! [adapt]      # shift, seeds, method, eval, optional table
//! [sweep]      # axis, grids, shifts, seeds, eval, method
//! [landscape]  # shift, seed, templates, steps, lr, batch_size, grid
//! ```
//!
//! Unknown keys are rejected with their full key path. Every section has
//! defaults, so an empty file is a valid config.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adapt::{MtwaConfig, TemplateSet};
use crate::data::{generate_synthetic, load_cifar10, CorruptionKind, Dataset, SyntheticConfig};
use crate::error::{Result, WattError};
use crate::eval::{EvalConfig, Method, Shift, SweepConfig};
use crate::landscape::GridSpec;
use crate::model::ModelConfig;
use crate::pretrain::PretrainConfig;
use crate::seed::derive_seed;

/// Overrides `output_dir` from the config file; command-line flags still win.
pub const OUTPUT_DIR_ENV: &str = "WATT_OUTPUT_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Root of every random stream of data generation and pretraining.
    pub seed: u64,
    /// Run single-threaded unless `--threads` says otherwise.
    pub deterministic: bool,
    pub output_dir: PathBuf,
    /// Pretrained checkpoint; written by `pretrain`, read by the other commands.
    /// Relative to `output_dir` unless absolute.
    pub checkpoint: PathBuf,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub pretrain: PretrainConfig,
    pub adapt: AdaptConfig,
    pub sweep: SweepConfig,
    pub landscape: LandscapeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            deterministic: true,
            output_dir: PathBuf::from("runs/default"),
            checkpoint: PathBuf::from("pretrained.ckpt"),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            pretrain: PretrainConfig::default(),
            adapt: AdaptConfig::default(),
            sweep: SweepConfig::default(),
            landscape: LandscapeConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic,
    Cifar10,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSource,
    /// Directory holding the CIFAR-10 binary batches.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cifar_dir: Option<PathBuf>,
    pub synthetic: SyntheticConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Synthetic,
            cifar_dir: None,
            synthetic: SyntheticConfig::default(),
        }
    }
}

/// Optional per-template table computed next to the adaptation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TableConfig {
    pub steps: usize,
    pub lr: f64,
}

impl Default for TableConfig {
    fn default() -> Self {
        TableConfig { steps: 10, lr: 1e-3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptConfig {
    pub shift: Shift,
    /// Trial seeds; each one reshuffles batches, redraws corruption noise and
    /// reseeds adaptation.
    pub seeds: Vec<u64>,
    pub method: Method,
    pub eval: EvalConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub table: Option<TableConfig>,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            shift: Shift::Corrupted(crate::data::Corruption {
                kind: CorruptionKind::GaussianNoise,
                severity: 3,
            }),
            seeds: vec![0],
            method: Method::Watt(MtwaConfig::default()),
            eval: EvalConfig::default(),
            table: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LandscapeConfig {
    pub shift: Shift,
    pub seed: u64,
    /// Indices into the default templates of the three adapted models.
    pub templates: [usize; 3],
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub grid: GridSpec,
}

impl Default for LandscapeConfig {
    fn default() -> Self {
        LandscapeConfig {
            shift: AdaptConfig::default().shift,
            seed: 0,
            templates: [0, 1, 2],
            steps: 10,
            lr: 1e-3,
            batch_size: 128,
            grid: GridSpec::default(),
        }
    }
}

impl LandscapeConfig {
    pub fn validate(&self) -> Result<()> {
        let n = TemplateSet::default_set().len();
        let [a, b, c] = self.templates;
        if a.max(b).max(c) >= n || a == b || b == c || a == c {
            return Err(WattError::Config {
                path: "landscape.templates".into(),
                message: format!("need three distinct indices below {n}"),
            });
        }
        if self.steps == 0 || self.batch_size == 0 || self.grid.resolution == 0 {
            return Err(WattError::Config {
                path: "landscape".into(),
                message: "steps, batch_size and grid.resolution must be positive".into(),
            });
        }
        Ok(())
    }
}

fn section(path: &str, r: Result<()>) -> Result<()> {
    r.map_err(|e| match e {
        WattError::Config { .. } => e,
        other => WattError::Config {
            path: path.into(),
            message: other.to_string(),
        },
    })
}

impl RunConfig {
    /// Parses TOML, naming the offending key path on failure.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| WattError::Config {
            path: "<file>".into(),
            message: e.to_string(),
        })?;
        serde_path_to_error::deserialize(de).map_err(|e| WattError::Config {
            path: e.path().to_string(),
            message: e.inner().message().to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| WattError::Config {
            path: path.display().to_string(),
            message: format!("cannot read config file: {e}"),
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| WattError::Config {
            path: "<serialize>".into(),
            message: e.to_string(),
        })
    }

    /// Applies `WATT_OUTPUT_DIR` if set and non-empty.
    pub fn apply_env(&mut self) {
        if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV).filter(|v| !v.is_empty()) {
            self.output_dir = PathBuf::from(dir);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seed > i64::MAX as u64 {
            return Err(WattError::Config {
                path: "seed".into(),
                message: "must fit in a TOML integer".into(),
            });
        }
        section("model", self.model.validate())?;
        section("pretrain", self.pretrain.validate())?;
        section("data.synthetic", self.data.synthetic.validate())?;
        if self.data.source == DataSource::Cifar10 && self.data.cifar_dir.is_none() {
            return Err(WattError::Config {
                path: "data.cifar_dir".into(),
                message: "required when data.source = \"cifar10\"".into(),
            });
        }
        if self.data.source == DataSource::Synthetic
            && (self.data.synthetic.image_size != self.model.image_size || self.model.channels != 1)
        {
            return Err(WattError::Config {
                path: "model.image_size".into(),
                message: format!(
                    "synthetic images are {0}x{0}x1 but the model expects {1}x{1}x{2}",
                    self.data.synthetic.image_size, self.model.image_size, self.model.channels
                ),
            });
        }
        section("adapt.eval", self.adapt.eval.validate())?;
        if self.adapt.seeds.is_empty() {
            return Err(WattError::Config {
                path: "adapt.seeds".into(),
                message: "at least one seed is required".into(),
            });
        }
        if let Method::Watt(m) | Method::OutputAvg(m) = &self.adapt.method {
            section("adapt.method", m.validate())?;
        }
        section("sweep", self.sweep.validate())?;
        self.landscape.validate()
    }

    /// Resolves the checkpoint path against the output directory.
    pub fn checkpoint_path(&self) -> PathBuf {
        if self.checkpoint.is_absolute() {
            self.checkpoint.clone()
        } else {
            self.output_dir.join(&self.checkpoint)
        }
    }

    /// Seed of the dataset generator.
    pub fn data_seed(&self) -> u64 {
        derive_seed(self.seed, "data")
    }

    pub fn init_seed(&self) -> u64 {
        derive_seed(self.seed, "model/init")
    }

    pub fn pretrain_seed(&self) -> u64 {
        derive_seed(self.seed, "pretrain")
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        match self.data.source {
            DataSource::Synthetic => generate_synthetic(&self.data.synthetic, self.data_seed()),
            DataSource::Cifar10 => load_cifar10(self.data.cifar_dir.as_deref().expect("checked in validate")),
        }
    }
}
