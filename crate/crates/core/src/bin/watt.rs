//! `watt`: pretrain, adapt, sweep, landscape and verify from one config file.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 runtime failure,
//! 3 verification failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use watt_core::adapt::{MtwaConfig, MtwaMode};
use watt_core::commands::{cmd_adapt, cmd_landscape, cmd_pretrain, cmd_sweep, cmd_verify};
use watt_core::config::{RunConfig, TableConfig};
use watt_core::eval::{EvalHead, Method, Shift, SweepAxis};
use watt_core::WattError;

#[derive(Parser, Debug)]
#[command(
    name = "watt",
    version,
    about = "Weight-averaged test-time adaptation on a tiny dual encoder"
)]
struct Cli {
    /// TOML run config; every key is optional.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Root seed for data generation and pretraining.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the config file and WATT_OUTPUT_DIR).
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Pretrained checkpoint path, relative to the output directory unless absolute.
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Worker threads. Defaults to 1 in deterministic mode, all cores otherwise.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Single-threaded, bit-reproducible runs (the default).
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true")]
    deterministic: Option<bool>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Contrastive pretraining; writes the checkpoint.
    Pretrain {
        /// Passes over the training split.
        #[arg(long)]
        epochs: Option<usize>,
        /// Adam learning rate.
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Adapts on one shift for every trial seed.
    Adapt(AdaptArgs),
    /// Runs an ablation grid.
    Sweep {
        /// batch_size, template_count, schedule, strategy or corruption.
        #[arg(long, value_parser = parse_enum::<SweepAxis>)]
        axis: Option<SweepAxis>,
        /// Evaluate on the first N test images of each shift.
        #[arg(long)]
        max_samples: Option<usize>,
        /// Trial seeds, comma-separated.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Loss and error over the plane of three single-template models.
    Landscape {
        /// Shift of the batch the three models adapt on.
        #[arg(long, value_parser = parse_shift)]
        shift: Option<Shift>,
        /// Adaptation steps per template.
        #[arg(long)]
        steps: Option<usize>,
        /// Grid points per axis before the marked coordinates are added.
        #[arg(long)]
        resolution: Option<usize>,
    },
    /// Runs the gradient, oracle and identity checks.
    Verify,
    /// Prints the effective config as TOML.
    ShowConfig,
}

#[derive(Args, Debug)]
struct AdaptArgs {
    /// `clean` or `<corruption>-<severity>`, e.g. `gaussian_noise-3`.
    #[arg(long, value_parser = parse_shift)]
    shift: Option<Shift>,
    /// sequential (WATT-S) or parallel (WATT-P).
    #[arg(long, value_parser = parse_enum::<MtwaMode>)]
    mode: Option<MtwaMode>,
    /// Inner steps per template.
    #[arg(short = 'L', long)]
    inner_steps: Option<usize>,
    /// Averaging rounds.
    #[arg(short = 'M', long)]
    rounds: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Test batch size; each batch adapts from the pretrained model.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Evaluate on the first N test images.
    #[arg(long)]
    max_samples: Option<usize>,
    /// single_temp or text_avg.
    #[arg(long, value_parser = parse_enum::<EvalHead>)]
    head: Option<EvalHead>,
    /// Trial seeds, comma-separated.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Also write the per-template table.
    #[arg(long)]
    table: bool,
}

fn parse_enum<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn parse_shift(s: &str) -> Result<Shift, String> {
    s.parse().map_err(|e: WattError| e.to_string())
}

fn apply_flags(cli: &Cli, cfg: &mut RunConfig) -> Result<(), WattError> {
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(d) = &cli.output_dir {
        cfg.output_dir = d.clone();
    }
    if let Some(c) = &cli.checkpoint {
        cfg.checkpoint = c.clone();
    }
    if let Some(d) = cli.deterministic {
        cfg.deterministic = d;
    }
    match &cli.command {
        Command::Pretrain { epochs, lr } => {
            if let Some(e) = epochs {
                cfg.pretrain.epochs = *e;
            }
            if let Some(lr) = lr {
                cfg.pretrain.lr = *lr;
            }
        }
        Command::Adapt(a) => {
            let a_cfg = &mut cfg.adapt;
            if let Some(s) = a.shift {
                a_cfg.shift = s;
            }
            if let Some(b) = a.batch_size {
                a_cfg.eval.batch_size = b;
            }
            if a.max_samples.is_some() {
                a_cfg.eval.max_samples = a.max_samples;
            }
            if let Some(h) = a.head {
                a_cfg.eval.head = h;
            }
            if let Some(s) = &a.seeds {
                a_cfg.seeds = s.clone();
            }
            if a.table && a_cfg.table.is_none() {
                a_cfg.table = Some(TableConfig::default());
            }
            let touches_method = a.mode.is_some() || a.inner_steps.is_some() || a.rounds.is_some() || a.lr.is_some();
            if touches_method {
                let m = match &mut a_cfg.method {
                    Method::Watt(m) | Method::OutputAvg(m) => m,
                    other if a.mode.is_some() => {
                        *other = Method::Watt(MtwaConfig::default());
                        match other {
                            Method::Watt(m) => m,
                            _ => unreachable!(),
                        }
                    }
                    _ => {
                        return Err(WattError::Config {
                            path: "adapt.method".into(),
                            message: "-L, -M and --lr apply to the watt and output_avg methods".into(),
                        })
                    }
                };
                if let Some(mode) = a.mode {
                    m.mode = mode;
                }
                if let Some(l) = a.inner_steps {
                    m.inner_steps = l;
                }
                if let Some(r) = a.rounds {
                    m.rounds = r;
                }
                if let Some(lr) = a.lr {
                    m.lr = lr;
                }
            }
        }
        Command::Sweep {
            axis,
            max_samples,
            seeds,
        } => {
            if let Some(x) = axis {
                cfg.sweep.axis = *x;
            }
            if max_samples.is_some() {
                cfg.sweep.eval.max_samples = *max_samples;
            }
            if let Some(s) = seeds {
                cfg.sweep.seeds = s.clone();
            }
        }
        Command::Landscape {
            shift,
            steps,
            resolution,
        } => {
            if let Some(s) = shift {
                cfg.landscape.shift = *s;
            }
            if let Some(s) = steps {
                cfg.landscape.steps = *s;
            }
            if let Some(r) = resolution {
                cfg.landscape.grid.resolution = *r;
            }
        }
        Command::Verify | Command::ShowConfig => {}
    }
    Ok(())
}

/// Config file, then the environment, then flags.
fn load_config(cli: &Cli) -> Result<RunConfig, WattError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_env();
    apply_flags(cli, &mut cfg)?;
    cfg.validate()?;
    Ok(cfg)
}

fn setup_threads(cli: &Cli, cfg: &RunConfig) -> Result<(), WattError> {
    let n = match cli.threads {
        Some(0) => return Err(WattError::invalid("--threads must be at least 1")),
        Some(n) => n,
        None if cfg.deterministic => 1,
        None => return Ok(()),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| WattError::invalid(format!("thread pool: {e}")))
}

fn run(cli: &Cli, cfg: &RunConfig) -> Result<ExitCode, WattError> {
    match &cli.command {
        Command::Pretrain { .. } => {
            let path = cmd_pretrain(cfg)?;
            println!("checkpoint written to {}", path.display());
        }
        Command::Adapt(_) => {
            let out = cmd_adapt(cfg)?;
            for r in &out.rows {
                println!("{}\t{}\tseed {}\taccuracy {:.4}", r.shift, r.method, r.seed, r.accuracy);
            }
            if let Some(t) = &out.table {
                println!(
                    "single-template mean {:.4}, weight average {:.4}",
                    t.single_template_mean(),
                    t.weight_avg_mean()
                );
            }
        }
        Command::Sweep { .. } => {
            let out = cmd_sweep(cfg)?;
            println!("{} rows ({} resumed)", out.rows.len(), out.resumed);
        }
        Command::Landscape { .. } => {
            let grid = cmd_landscape(cfg)?;
            for m in &grid.marked {
                println!(
                    "{}\t({:.5}, {:.5})\tloss {:.5}\terror {:.4}",
                    m.name, m.x, m.y, m.loss, m.error
                );
            }
        }
        Command::Verify => {
            let report = cmd_verify(cfg)?;
            for c in &report.checks {
                let status = if c.passed { "ok" } else { "FAILED" };
                println!("{status:6} {:20} {}", c.name, c.detail);
            }
            if !report.all_passed() {
                return Ok(ExitCode::from(3));
            }
        }
        Command::ShowConfig => print!("{}", cfg.to_toml_string()?),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let cfg = match load_config(&cli).and_then(|c| setup_threads(&cli, &c).map(|_| c)) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match run(&cli, &cfg) {
        Ok(code) => code,
        Err(WattError::Verification(msg)) => {
            eprintln!("verification failed: {msg}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
