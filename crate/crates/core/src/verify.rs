//! Self-check suite behind `watt verify`: gradient checks, loss and
//! pseudo-label oracles, reduction identities, averaging and plane geometry,
//! all on a tiny randomly initialized model.

use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::adapt::{
    adapt_single_template, average_parameters, bundle_from_embeddings, entropy_loss, tta_loss, tta_loss_value,
    tta_loss_with_grads, watt_parallel, watt_sequential, LossKind, MtwaConfig, MtwaMode, Targets, TemplateSet,
    TextBank, DEFAULT_TEMPLATES,
};
use crate::autodiff::{Graph, Tensor, Var};
use crate::data::synthetic::CLASS_NAMES;
use crate::data::ImageBatch;
use crate::error::{Result, WattError};
use crate::eval::{head_embedding, EvalHead};
use crate::landscape::{build_plane, evaluate_grid, loss_and_error, GridSpec};
use crate::model::{ClipModel, ModelConfig, ParameterSet};
use crate::pretrain::contrastive_loss;
use crate::seed::{derive_seed, rng};

const GRAD_TOL: f64 = 1e-4;
const FD_STEP: f64 = 1e-5;
const ALGEBRA_TOL: f64 = 1e-10;
const LOSS_TOL: f64 = 1e-10;
const AVERAGE_TOL: f64 = 1e-12;
const PLANE_TOL: f64 = 1e-8;

#[derive(Clone, Debug, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub library_version: String,
    pub checks: Vec<CheckOutcome>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

type Check = fn(u64) -> Result<String>;

const CHECKS: [(&str, Check); 7] = [
    ("gradients/ops", check_op_gradients),
    ("gradients/tta_loss", check_tta_gradients),
    ("pseudo_labels", check_pseudo_labels),
    ("loss_oracles", check_loss_oracles),
    ("reductions", check_reductions),
    ("averaging", check_averaging),
    ("landscape", check_landscape),
];

/// Runs every check; failures are recorded, never propagated.
pub fn run_verification(seed: u64) -> VerifyReport {
    let checks = CHECKS
        .iter()
        .map(|(name, f)| {
            let t = Instant::now();
            let r = f(derive_seed(seed, name));
            let seconds = t.elapsed().as_secs_f64();
            match r {
                Ok(detail) => CheckOutcome {
                    name: name.to_string(),
                    passed: true,
                    detail,
                    seconds,
                },
                Err(e) => CheckOutcome {
                    name: name.to_string(),
                    passed: false,
                    detail: e.to_string(),
                    seconds,
                },
            }
        })
        .collect();
    VerifyReport {
        seed,
        library_version: crate::VERSION.to_string(),
        checks,
    }
}

fn fail(msg: impl Into<String>) -> WattError {
    WattError::Verification(msg.into())
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(fail(msg()))
    }
}

fn randn(r: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.sample(StandardNormal)).collect()).expect("shape matches")
}

fn positive(r: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(0.5..2.0)).collect()).expect("shape matches")
}

/// Tiny encoder pair used by the model-level checks.
pub fn tiny_model(seed: u64) -> Result<ClipModel> {
    let config = ModelConfig {
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
    };
    ClipModel::init(config, seed)
}

fn random_images(r: &mut impl Rng, n: usize, size: usize) -> Result<ImageBatch> {
    let pixels = (0..n * size * size).map(|_| r.random_range(0.0..1.0)).collect();
    ImageBatch::new(n, size, size, 1, pixels)
}

fn class_names(k: usize) -> Vec<String> {
    CLASS_NAMES[..k].iter().map(|s| s.to_string()).collect()
}

/// Norm-wise relative error, `‖a - b‖ / max(‖a‖, ‖b‖)`.
fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

type Build = dyn Fn(&mut Graph, &[Var]) -> Result<Var>;

/// Scalar `Σ out ⊙ w` for a fixed random `w`, so every output entry matters.
fn probe(
    build: &Build,
    inputs: &[Tensor],
    weights: &mut Option<Tensor>,
    seed: u64,
    grad: bool,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), grad)).collect();
    let out = build(&mut g, &vars)?;
    let w = weights
        .get_or_insert_with(|| randn(&mut rng(seed), g.shape(out)))
        .clone();
    let wv = g.constant(w);
    let prod = g.mul(out, wv)?;
    let s = g.sum_all(prod);
    let value = g.value(s).data()[0];
    if !grad {
        return Ok((value, Vec::new()));
    }
    let grads = g.backward(s)?;
    let gs = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            grads
                .get(v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();
    Ok((value, gs))
}

fn gradient_check(name: &str, build: &Build, inputs: Vec<Tensor>, seed: u64) -> Result<f64> {
    let mut w = None;
    let (_, analytic) = probe(build, &inputs, &mut w, seed, true)?;
    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let mut numeric = vec![0.0; input.numel()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let mut eval = |delta: f64| -> Result<f64> {
                let mut xs = inputs.clone();
                xs[k].data_mut()[i] += delta;
                Ok(probe(build, &xs, &mut w, seed, false)?.0)
            };
            *slot = (eval(FD_STEP)? - eval(-FD_STEP)?) / (2.0 * FD_STEP);
        }
        let e = rel_err(&analytic[k], &numeric);
        if e.is_nan() || e >= GRAD_TOL {
            return Err(fail(format!("{name}: input {k} relative error {e:e} >= {GRAD_TOL:e}")));
        }
        worst = worst.max(e);
    }
    Ok(worst)
}

/// Every differentiable op with a random input drawn from its domain.
#[allow(clippy::type_complexity)]
pub fn op_cases(seed: u64) -> Vec<(&'static str, Box<Build>, Vec<Tensor>)> {
    let mut r = rng(seed);
    let r = &mut r;
    vec![
        (
            "matmul",
            Box::new(|g: &mut Graph, v: &[Var]| g.matmul(v[0], v[1])),
            vec![randn(r, &[3, 4]), randn(r, &[4, 2])],
        ),
        (
            "batched_matmul",
            Box::new(|g: &mut Graph, v: &[Var]| g.matmul(v[0], v[1])),
            vec![randn(r, &[2, 3, 4]), randn(r, &[2, 4, 2])],
        ),
        (
            "transpose",
            Box::new(|g: &mut Graph, v: &[Var]| g.transpose(v[0])),
            vec![randn(r, &[3, 4])],
        ),
        (
            "reshape",
            Box::new(|g: &mut Graph, v: &[Var]| g.reshape(v[0], &[4, 3])),
            vec![randn(r, &[3, 4])],
        ),
        (
            "concat",
            Box::new(|g: &mut Graph, v: &[Var]| g.concat(&[v[0], v[1]], 1)),
            vec![randn(r, &[2, 3]), randn(r, &[2, 2])],
        ),
        (
            "slice",
            Box::new(|g: &mut Graph, v: &[Var]| g.slice(v[0], 1, 1, 2)),
            vec![randn(r, &[3, 4])],
        ),
        (
            "gather_rows",
            Box::new(|g: &mut Graph, v: &[Var]| g.gather_rows(v[0], &[2, 0, 2])),
            vec![randn(r, &[3, 4])],
        ),
        (
            "broadcast_leading",
            Box::new(|g: &mut Graph, v: &[Var]| g.broadcast_leading(v[0], 3)),
            vec![randn(r, &[2, 4])],
        ),
        (
            "add",
            Box::new(|g: &mut Graph, v: &[Var]| g.add(v[0], v[1])),
            vec![randn(r, &[3, 4]), randn(r, &[4])],
        ),
        (
            "sub",
            Box::new(|g: &mut Graph, v: &[Var]| g.sub(v[0], v[1])),
            vec![randn(r, &[3, 4]), randn(r, &[3, 4])],
        ),
        (
            "mul",
            Box::new(|g: &mut Graph, v: &[Var]| g.mul(v[0], v[1])),
            vec![randn(r, &[3, 4]), randn(r, &[4])],
        ),
        (
            "div",
            Box::new(|g: &mut Graph, v: &[Var]| g.div(v[0], v[1])),
            vec![randn(r, &[3, 4]), positive(r, &[3, 4])],
        ),
        (
            "exp",
            Box::new(|g: &mut Graph, v: &[Var]| Ok(g.exp(v[0]))),
            vec![randn(r, &[3, 4])],
        ),
        (
            "log",
            Box::new(|g: &mut Graph, v: &[Var]| Ok(g.log(v[0]))),
            vec![positive(r, &[3, 4])],
        ),
        (
            "sqrt",
            Box::new(|g: &mut Graph, v: &[Var]| Ok(g.sqrt(v[0]))),
            vec![positive(r, &[3, 4])],
        ),
        (
            "scale",
            Box::new(|g: &mut Graph, v: &[Var]| Ok(g.scale(v[0], -1.7))),
            vec![randn(r, &[3, 4])],
        ),
        (
            "gelu",
            Box::new(|g: &mut Graph, v: &[Var]| Ok(g.gelu(v[0]))),
            vec![randn(r, &[3, 4])],
        ),
        (
            "sum",
            Box::new(|g: &mut Graph, v: &[Var]| g.sum(v[0], 1)),
            vec![randn(r, &[3, 4])],
        ),
        (
            "mean",
            Box::new(|g: &mut Graph, v: &[Var]| g.mean(v[0], 0)),
            vec![randn(r, &[3, 4])],
        ),
        (
            "sum_all",
            Box::new(|g: &mut Graph, v: &[Var]| Ok(g.sum_all(v[0]))),
            vec![randn(r, &[3, 4])],
        ),
        (
            "softmax",
            Box::new(|g: &mut Graph, v: &[Var]| g.softmax(v[0], 1)),
            vec![randn(r, &[3, 4])],
        ),
        (
            "log_softmax",
            Box::new(|g: &mut Graph, v: &[Var]| g.log_softmax(v[0], 0)),
            vec![randn(r, &[3, 4])],
        ),
        (
            "layer_norm",
            Box::new(|g: &mut Graph, v: &[Var]| g.layer_norm(v[0], v[1], v[2], 1)),
            vec![randn(r, &[3, 5]), randn(r, &[5]), randn(r, &[5])],
        ),
        (
            "l2_normalize",
            Box::new(|g: &mut Graph, v: &[Var]| g.l2_normalize(v[0], 1)),
            vec![randn(r, &[3, 4])],
        ),
    ]
}

fn check_op_gradients(seed: u64) -> Result<String> {
    let cases = op_cases(seed);
    let mut worst: f64 = 0.0;
    for (i, (name, build, inputs)) in cases.iter().enumerate() {
        worst = worst.max(gradient_check(
            name,
            build.as_ref(),
            inputs.clone(),
            derive_seed(seed, &format!("w/{i}")),
        )?);
    }
    Ok(format!("{} ops, worst relative error {worst:.2e}", cases.len()))
}

fn check_tta_gradients(seed: u64) -> Result<String> {
    let model = tiny_model(seed)?;
    let images = random_images(&mut rng(derive_seed(seed, "images")), 4, 8)?;
    let ln = model.ln_parameters();
    // A random init tends to give every image the same pseudo-class, where
    // the loss is flat; fixed targets with distinct rows avoid that.
    let mut r = rng(derive_seed(seed, "targets"));
    let zt = Tensor::from_rows(&unit_rows(&randn(&mut r, &[4, 8])))?;
    let q = Tensor::from_rows(
        &(0..4)
            .map(|_| {
                let w: Vec<f64> = (0..4).map(|_| r.random_range(0.1..1.0)).collect();
                let s: f64 = w.iter().sum();
                w.iter().map(|v| v / s).collect()
            })
            .collect::<Vec<_>>(),
    )?;
    let targets = Targets { q, zt };
    let (_, grads) = tta_loss_with_grads(&model, &ln, &images, &targets)?;
    let flat = ln.flatten();
    let mut analytic = Vec::with_capacity(flat.len());
    for (name, _) in ln.iter() {
        analytic.extend_from_slice(grads.get(name).ok_or_else(|| WattError::MissingGradient(name.into()))?);
    }
    let mut numeric = vec![0.0; flat.len()];
    for (i, slot) in numeric.iter_mut().enumerate() {
        let at = |delta: f64| -> Result<f64> {
            let mut f = flat.clone();
            f[i] += delta;
            tta_loss_value(&model, &ln.with_flat(&f)?, &images, &targets)
        };
        *slot = (at(FD_STEP)? - at(-FD_STEP)?) / (2.0 * FD_STEP);
    }
    let e = rel_err(&analytic, &numeric);
    ensure(e < GRAD_TOL, || format!("relative error {e:e} >= {GRAD_TOL:e}"))?;
    Ok(format!("{} LN coordinates, relative error {e:.2e}", flat.len()))
}

fn check_pseudo_labels(seed: u64) -> Result<String> {
    let mut r = rng(seed);
    let sizes = [1, 2, 4, 8];
    for trial in 0..100 {
        let b = sizes[trial % sizes.len()];
        let zv = randn(&mut r, &[b, 6]);
        let classes = randn(&mut r, &[5, 6]);
        let bundle = bundle_from_embeddings(&zv, &classes, 0.01)?;
        for i in 0..b {
            let s: f64 = bundle.q.row(i).iter().sum();
            ensure((s - 1.0).abs() <= ALGEBRA_TOL, || {
                format!("Q row {i} sums to {s} (B={b})")
            })?;
            for (name, m) in [("Sv", &bundle.sv), ("St", &bundle.st)] {
                let d = m.row(i)[i];
                ensure((d - 1.0).abs() <= ALGEBRA_TOL, || {
                    format!("{name} diagonal {d} (B={b})")
                })?;
                for j in 0..b {
                    let (a, c) = (m.row(i)[j], m.row(j)[i]);
                    ensure((a - c).abs() <= ALGEBRA_TOL, || {
                        format!("{name} not symmetric at ({i},{j})")
                    })?;
                }
            }
        }
        if b == 1 {
            ensure(bundle.q.data() == [1.0], || {
                format!("B=1 gives Q = {:?}", bundle.q.data())
            })?;
        }
        let same = Tensor::new(vec![b, 6], zv.row(0).repeat(b))?;
        let q = bundle_from_embeddings(&same, &classes, 0.01)?.q;
        let u = 1.0 / b as f64;
        ensure(q.data().iter().all(|v| (v - u).abs() <= ALGEBRA_TOL), || {
            format!("identical images give non-uniform Q (B={b})")
        })?;
    }
    Ok("100 batches".into())
}

fn unit_rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows())
        .map(|i| {
            let r = t.row(i);
            let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            r.iter().map(|v| v / n).collect()
        })
        .collect()
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `-(1/B) Σ_i Σ_j q_ij log p_ij`, every quantity rebuilt from the raw inputs.
fn tta_oracle(zv: &Tensor, classes: &Tensor, tau: f64) -> f64 {
    let v = unit_rows(zv);
    let c = unit_rows(classes);
    let b = v.len();
    let zt: Vec<&Vec<f64>> = v
        .iter()
        .map(|vi| {
            let mut best = 0;
            for k in 1..c.len() {
                if cos(vi, &c[k]) > cos(vi, &c[best]) {
                    best = k;
                }
            }
            &c[best]
        })
        .collect();
    let mut total = 0.0;
    for i in 0..b {
        let qz: f64 = (0..b)
            .map(|j| ((cos(&v[i], &v[j]) + cos(zt[i], zt[j])) / (2.0 * tau)).exp())
            .sum();
        let pz: f64 = (0..b).map(|j| (cos(&v[i], zt[j]) / tau).exp()).sum();
        for j in 0..b {
            let q = ((cos(&v[i], &v[j]) + cos(zt[i], zt[j])) / (2.0 * tau)).exp() / qz;
            let p = (cos(&v[i], zt[j]) / tau).exp() / pz;
            total += q * p.ln();
        }
    }
    -total / b as f64
}

fn check_loss_oracles(seed: u64) -> Result<String> {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for trial in 0..50 {
        let b = 2 + trial % 5;
        // Moderate temperature keeps the naive exponentials in range.
        let tau = 0.5;
        let zv = randn(&mut r, &[b, 4]);
        let classes = randn(&mut r, &[3, 4]);
        let got = tta_loss(&bundle_from_embeddings(&zv, &classes, tau)?);
        let want = tta_oracle(&zv, &classes, tau);
        ensure((got - want).abs() <= LOSS_TOL, || {
            format!("tta_loss {got} vs oracle {want}")
        })?;
        worst = worst.max((got - want).abs());

        let logits = randn(&mut r, &[b, 3]);
        let mut p = Vec::new();
        for i in 0..b {
            let z: f64 = logits.row(i).iter().map(|v| v.exp()).sum();
            p.extend(logits.row(i).iter().map(|v| v.exp() / z));
        }
        let p = Tensor::new(vec![b, 3], p)?;
        let mut want = 0.0;
        for i in 0..b {
            for k in 0..3 {
                want -= p.row(i)[k] * p.row(i)[k].ln();
            }
        }
        want /= b as f64;
        let got = entropy_loss(&p);
        ensure((got - want).abs() <= LOSS_TOL, || {
            format!("entropy_loss {got} vs oracle {want}")
        })?;
        worst = worst.max((got - want).abs());

        let img = Tensor::from_rows(&unit_rows(&randn(&mut r, &[b, 4])))?;
        let txt = Tensor::from_rows(&unit_rows(&randn(&mut r, &[b, 4])))?;
        let t = 0.1;
        let mut want = 0.0;
        for i in 0..b {
            let row: f64 = (0..b).map(|j| (cos(img.row(i), txt.row(j)) / t).exp()).sum();
            let col: f64 = (0..b).map(|j| (cos(img.row(j), txt.row(i)) / t).exp()).sum();
            let s = cos(img.row(i), txt.row(i)) / t;
            want -= 0.5 * ((s - row.ln()) + (s - col.ln()));
        }
        want /= b as f64;
        let got = contrastive_loss(&img, &txt, t)?;
        ensure((got - want).abs() <= LOSS_TOL, || {
            format!("contrastive_loss {got} vs oracle {want}")
        })?;
        worst = worst.max((got - want).abs());
    }
    Ok(format!("50 instances, worst absolute error {worst:.2e}"))
}

fn check_reductions(seed: u64) -> Result<String> {
    let model = tiny_model(seed)?;
    let images = random_images(&mut rng(derive_seed(seed, "images")), 6, 8)?;
    let names = class_names(4);
    let t0 = TemplateSet::new(vec![DEFAULT_TEMPLATES[0].to_string()])?;
    let bank1 = TextBank::new(&model, &t0, &names)?;
    let base = MtwaConfig {
        inner_steps: 2,
        rounds: 3,
        seed: derive_seed(seed, "adapt"),
        ..MtwaConfig::default()
    };
    let par = MtwaConfig {
        mode: MtwaMode::Parallel,
        ..base.clone()
    };
    let seq = MtwaConfig {
        mode: MtwaMode::Sequential,
        ..base.clone()
    };
    let p1 = watt_parallel(&model, &images, &bank1, &par)?;
    let s1 = watt_sequential(&model, &images, &bank1, &seq)?;
    let plain = adapt_single_template(
        &model,
        &images,
        DEFAULT_TEMPLATES[0],
        &names,
        2,
        base.lr,
        LossKind::TransductiveCe,
    )?;
    // One template, one round: both schedules are a plain L-step run.
    let one_round = MtwaConfig {
        rounds: 1,
        ..par.clone()
    };
    let p_one = watt_parallel(&model, &images, &bank1, &one_round)?;
    let s_one = watt_sequential(
        &model,
        &images,
        &bank1,
        &MtwaConfig {
            rounds: 1,
            ..seq.clone()
        },
    )?;
    ensure(p1.bit_eq(&s1), || "H=1: parallel and sequential differ".into())?;
    ensure(p_one.bit_eq(&plain) && s_one.bit_eq(&plain), || {
        "H=1, M=1 differs from plain adaptation".into()
    })?;

    let repeated = TemplateSet::with_repeats(vec![DEFAULT_TEMPLATES[0].to_string(); 4])?;
    let bank4 = TextBank::new(&model, &repeated, &names)?;
    let p4 = watt_parallel(&model, &images, &bank4, &par)?;
    ensure(p4.bit_eq(&p1), || {
        "identical templates: parallel differs from H=1".into()
    })?;

    let frozen = model.ln_parameters();
    let lr0 = |c: &MtwaConfig| MtwaConfig { lr: 0.0, ..c.clone() };
    let bank8 = TextBank::new(&model, &TemplateSet::default_set(), &names)?;
    ensure(
        watt_parallel(&model, &images, &bank8, &lr0(&par))?.bit_eq(&frozen),
        || "lr=0 parallel moved".into(),
    )?;
    ensure(
        watt_sequential(&model, &images, &bank8, &lr0(&seq))?.bit_eq(&frozen),
        || "lr=0 sequential moved".into(),
    )?;
    let single = adapt_single_template(
        &model,
        &images,
        DEFAULT_TEMPLATES[3],
        &names,
        3,
        0.0,
        LossKind::EntropyMin,
    )?;
    ensure(single.bit_eq(&frozen), || {
        "lr=0 single-template adaptation moved".into()
    })?;

    let a = head_embedding(&model, &bank1, EvalHead::SingleTemp)?;
    let b = head_embedding(&model, &bank1, EvalHead::TextAvg)?;
    ensure(a.bit_eq(&b), || "H=1: single_temp and text_avg heads differ".into())?;
    Ok("H=1 schedules, repeated templates, lr=0, heads".into())
}

fn check_averaging(seed: u64) -> Result<String> {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for trial in 0..20 {
        let n = 1 + trial % 6;
        let sets: Vec<ParameterSet> = (0..n)
            .map(|_| {
                let mut p = ParameterSet::new();
                p.insert("visual.ln_pre.gamma", randn(&mut r, &[5]))
                    .expect("fresh name");
                p.insert("visual.ln_pre.beta", randn(&mut r, &[5])).expect("fresh name");
                p
            })
            .collect();
        let avg = average_parameters(&sets)?.flatten();
        let flats: Vec<Vec<f64>> = sets.iter().map(ParameterSet::flatten).collect();
        for (i, got) in avg.iter().enumerate() {
            let want = flats.iter().map(|f| f[i]).sum::<f64>() / n as f64;
            worst = worst.max((got - want).abs());
        }
        let neg = sets[0].with_flat(&flats[0].iter().map(|v| -v).collect::<Vec<_>>())?;
        let zero = average_parameters(&[sets[0].clone(), neg])?;
        ensure(zero.flatten().iter().all(|&v| v == 0.0), || {
            "{θ, -θ} does not average to zero".into()
        })?;
    }
    ensure(worst <= AVERAGE_TOL, || format!("average off by {worst:e}"))?;
    Ok(format!("20 sets, worst error {worst:.2e}"))
}

fn check_landscape(seed: u64) -> Result<String> {
    let model = tiny_model(seed)?;
    let mut r = rng(derive_seed(seed, "points"));
    let w0 = model.ln_parameters();
    let jitter = |r: &mut rand_chacha::ChaCha8Rng| -> Result<ParameterSet> {
        let f: Vec<f64> = w0
            .flatten()
            .iter()
            .map(|v| v + 0.05 * r.sample::<f64, _>(StandardNormal))
            .collect();
        w0.with_flat(&f)
    };
    let (w1, w2) = (jitter(&mut r)?, jitter(&mut r)?);
    let plane = build_plane(&w0, &w1, &w2)?;
    let (u, v) = (plane.u_hat(), plane.v_hat());
    let nu = cos(u, u).sqrt();
    let nv = cos(v, v).sqrt();
    ensure(
        (nu - 1.0).abs() <= ALGEBRA_TOL && (nv - 1.0).abs() <= ALGEBRA_TOL,
        || format!("norms {nu}, {nv}"),
    )?;
    ensure(cos(u, v).abs() <= ALGEBRA_TOL, || format!("û·v̂ = {:e}", cos(u, v)))?;
    ensure(plane.point(0.0, 0.0)?.bit_eq(&w0), || "P(0,0) is not w0".into())?;
    for (w, (x, y)) in [(&w1, plane.w1_coords), (&w2, plane.w2_coords)] {
        let back = plane.point(x, y)?.flatten();
        let e = back
            .iter()
            .zip(w.flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        ensure(e <= PLANE_TOL, || format!("vertex reconstructed with error {e:e}"))?;
    }
    let images = random_images(&mut r, 6, 8)?;
    let labels: Vec<usize> = (0..6).map(|i| i % 4).collect();
    let emb = TextBank::new(&model, &TemplateSet::default_prefix(3)?, &class_names(4))?.ensemble();
    let spec = GridSpec {
        resolution: 3,
        margin: 0.3,
    };
    let grid = evaluate_grid(&plane, &spec, &model, &images, &labels, &emb)?;
    let direct = loss_and_error(&model.with_parameters(&w0)?, &images, &labels, &emb)?.0;
    let cell = grid.cell(0.0, 0.0).ok_or_else(|| fail("no grid cell at w0"))?.loss;
    ensure(cell.to_bits() == direct.to_bits(), || {
        format!("cell at w0 {cell} vs direct {direct}")
    })?;
    Ok(format!("{} cells", grid.cells.len()))
}
