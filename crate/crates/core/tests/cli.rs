//! Config handling, the library commands on a tiny run, and the binary's
//! exit codes.

mod common;

use std::fs;
use std::path::Path;
use std::process::Command;

use common::{assert_same, snapshot};
use serde_json::Value;
use watt_core::commands::{cmd_adapt, cmd_landscape, cmd_pretrain, cmd_sweep, cmd_verify};
use watt_core::config::{RunConfig, TableConfig, OUTPUT_DIR_ENV};
use watt_core::WattError;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_watt"));
    c.env_remove(OUTPUT_DIR_ENV);
    c
}

#[test]
fn config_snapshot_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = common::tiny_run(dir.path());
    c.adapt.table = Some(TableConfig { steps: 3, lr: 2e-3 });
    let text = c.to_toml_string().unwrap();
    let back = RunConfig::from_toml_str(&text).unwrap();
    assert_eq!(back.to_toml_string().unwrap(), text);
    assert_eq!(back.checkpoint_path(), c.checkpoint_path());
}

#[test]
fn unknown_and_invalid_keys_name_their_path() {
    let err = RunConfig::from_toml_str("[adapt.eval]\nbatch_sise = 4\n").unwrap_err();
    assert!(err.to_string().contains("adapt.eval"), "{err}");
    let mut c = RunConfig::default();
    c.adapt.eval.batch_size = 0;
    let err = c.validate().unwrap_err();
    assert!(err.to_string().contains("adapt"), "{err}");
}

#[test]
fn missing_checkpoint_is_a_checkpoint_error() {
    let dir = tempfile::tempdir().unwrap();
    let c = common::tiny_run(dir.path());
    assert!(matches!(cmd_adapt(&c), Err(WattError::Checkpoint { .. })));
    assert!(matches!(cmd_landscape(&c), Err(WattError::Checkpoint { .. })));
}

#[test]
fn commands_write_their_outputs_and_rerun_identically() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = common::tiny_run(dir.path());
    c.adapt.table = Some(TableConfig { steps: 1, lr: 1e-3 });

    let ckpt = cmd_pretrain(&c).unwrap();
    assert!(ckpt.exists());
    let adapt = cmd_adapt(&c).unwrap();
    assert_eq!(adapt.rows.len(), 2 * c.adapt.seeds.len());
    let table = adapt.table.as_ref().unwrap();
    assert_eq!(table.per_template.len(), 2);
    assert_eq!(table.weight_avg.len(), 2);
    let sweep = cmd_sweep(&c).unwrap();
    assert_eq!(sweep.rows.len(), 3);
    assert_eq!(sweep.resumed, 0);
    let grid = cmd_landscape(&c).unwrap();
    assert_eq!(grid.marked.len(), 4);
    assert!(cmd_verify(&c).unwrap().all_passed());

    for sub in ["pretrain", "adapt", "sweep", "landscape", "verify"] {
        let d = dir.path().join(sub);
        let back = RunConfig::load(&d.join("config.toml")).unwrap();
        assert_eq!(back.to_toml_string().unwrap(), c.to_toml_string().unwrap(), "{sub}");
        let manifest: Value = serde_json::from_slice(&fs::read(d.join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest["command"], sub);
        for out in manifest["outputs"].as_array().unwrap() {
            assert!(dir.path().join(out.as_str().unwrap()).exists(), "{out}");
        }
    }
    let csv = fs::read_to_string(dir.path().join("landscape/grid.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "x,y,loss,error");
    assert_eq!(csv.lines().count(), 1 + grid.cells.len());

    let first = snapshot(dir.path());
    cmd_pretrain(&c).unwrap();
    cmd_adapt(&c).unwrap();
    cmd_sweep(&c).unwrap();
    cmd_landscape(&c).unwrap();
    cmd_verify(&c).unwrap();
    assert_same(&first, &snapshot(dir.path()));
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();

    let s = bin().args(["--output-dir", out, "verify"]).output().unwrap().status;
    assert_eq!(s.code(), Some(0));
    assert!(dir.path().join("verify/report.json").exists());

    assert_eq!(
        bin().args(["adapt", "--no-such-flag"]).output().unwrap().status.code(),
        Some(1)
    );
    assert_eq!(bin().arg("--help").output().unwrap().status.code(), Some(0));

    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[pretrain]\nepochz = 3\n").unwrap();
    let o = bin()
        .args(["-c", cfg.to_str().unwrap(), "show-config"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("pretrain.epochz"));

    // Adapting without a checkpoint is a runtime failure.
    let o = bin().args(["--output-dir", out, "adapt"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn flags_override_env_which_overrides_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "seed = 3\noutput_dir = \"from-file\"\n").unwrap();
    let show = |env: Option<&str>, flag: Option<&str>| -> RunConfig {
        let mut c = bin();
        c.args(["-c", cfg.to_str().unwrap()]);
        if let Some(e) = env {
            c.env(OUTPUT_DIR_ENV, e);
        }
        if let Some(f) = flag {
            c.args(["--output-dir", f]);
        }
        let o = c.arg("show-config").output().unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        RunConfig::from_toml_str(&String::from_utf8(o.stdout).unwrap()).unwrap()
    };
    assert_eq!(show(None, None).output_dir, Path::new("from-file"));
    assert_eq!(show(Some("from-env"), None).output_dir, Path::new("from-env"));
    assert_eq!(
        show(Some("from-env"), Some("from-flag")).output_dir,
        Path::new("from-flag")
    );
    assert_eq!(show(None, None).seed, 3);
}
