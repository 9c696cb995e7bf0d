#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde_json::Value;

use watt_core::autodiff::Tensor;
use watt_core::config::RunConfig;
use watt_core::data::ImageBatch;
use watt_core::model::{ClipModel, ModelConfig};
use watt_core::seed::rng;

pub mod oracles;

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        image_size: 8,
        channels: 1,
        patch_size: 4,
        d_model: 8,
        visual_layers: 1,
        visual_heads: 2,
        mlp_hidden: 16,
        text_layers: 1,
        text_heads: 2,
        text_max_len: 64,
        embed_dim: 8,
        tau: 0.01,
    }
}

pub fn tiny_model(seed: u64) -> ClipModel {
    ClipModel::init(tiny_config(), seed).unwrap()
}

pub fn images(seed: u64, n: usize) -> ImageBatch {
    let mut r = rng(seed);
    let pixels = (0..n * 64).map(|_| r.random_range(0.0..1.0)).collect();
    ImageBatch::new(n, 8, 8, 1, pixels).unwrap()
}

pub fn names(k: usize) -> Vec<String> {
    [
        "stripes",
        "columns",
        "diagonals",
        "checkers",
        "ring",
        "disk",
        "cross",
        "gradient",
    ][..k]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

pub fn randn(r: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(
        vec![rows, cols],
        (0..rows * cols).map(|_| r.sample(StandardNormal)).collect(),
    )
    .unwrap()
}

pub fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn unit(a: &[f64]) -> Vec<f64> {
    let n = dot(a, a).sqrt();
    a.iter().map(|v| v / n).collect()
}

/// Small end-to-end config: 8x8 synthetic images, a two-epoch pretrain
/// without the accuracy gate, and short adaptation runs.
pub fn tiny_run(dir: &std::path::Path) -> RunConfig {
    let mut c = RunConfig {
        output_dir: dir.to_path_buf(),
        model: tiny_config(),
        ..RunConfig::default()
    };
    c.data.synthetic.image_size = 8;
    c.data.synthetic.train_size = 256;
    c.data.synthetic.test_size = 64;
    c.pretrain.epochs = 2;
    c.pretrain.batch_size = 32;
    c.pretrain.accuracy_gate = 0.0;
    c.adapt.eval.max_samples = Some(32);
    c.adapt.eval.batch_size = 16;
    c.adapt.seeds = vec![0, 1];
    if let watt_core::eval::Method::Watt(m) = &mut c.adapt.method {
        m.inner_steps = 1;
        m.rounds = 2;
    }
    c.sweep.batch_sizes = vec![1, 4, 16];
    c.sweep.seeds = vec![0];
    c.sweep.eval.max_samples = Some(16);
    c.sweep.method.inner_steps = 1;
    c.sweep.method.rounds = 1;
    c.landscape.batch_size = 16;
    c.landscape.steps = 2;
    c.landscape.grid.resolution = 5;
    c
}

/// Every file under `root`, with timing fields dropped from JSON so two
/// runs can be compared.
pub fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn strip(v: &mut Value) {
        match v {
            Value::Object(m) => {
                m.remove("wall_clock_seconds");
                m.remove("seconds");
                m.values_mut().for_each(strip);
            }
            Value::Array(a) => a.iter_mut().for_each(strip),
            _ => {}
        }
    }
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
                continue;
            }
            let bytes = fs::read(&p).unwrap();
            let name = p.strip_prefix(root).unwrap().display().to_string();
            let ext = p.extension().and_then(|e| e.to_str()).unwrap_or("");
            let bytes = match ext {
                "json" => {
                    let mut v: Value = serde_json::from_slice(&bytes).unwrap();
                    strip(&mut v);
                    serde_json::to_vec(&v).unwrap()
                }
                "jsonl" => String::from_utf8(bytes)
                    .unwrap()
                    .lines()
                    .flat_map(|l| {
                        let mut v: Value = serde_json::from_str(l).unwrap();
                        strip(&mut v);
                        serde_json::to_vec(&v).unwrap()
                    })
                    .collect(),
                _ => bytes,
            };
            out.insert(name, bytes);
        }
    }
    out
}

pub fn assert_same(a: &BTreeMap<String, Vec<u8>>, b: &BTreeMap<String, Vec<u8>>) {
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    for (k, v) in a {
        assert!(v == &b[k], "{k} differs between runs");
    }
}
