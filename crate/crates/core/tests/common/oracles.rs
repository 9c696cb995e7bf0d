//! Reference computations written from the definitions, shared by the
//! integration tests and the acceptance harness.

use watt_core::autodiff::{Graph, Tensor, Var};

use super::{dot, rows, unit};

pub const FD_STEP: f64 = 1e-5;

pub type Build<'a> = dyn Fn(&mut Graph, &[Var]) -> Var + 'a;

/// Reduces the op output with fixed weights `sin(i + 1)` so every entry counts.
fn scalar(g: &mut Graph, out: Var) -> Var {
    let n = g.value(out).numel();
    let w = Tensor::new(g.shape(out).to_vec(), (0..n).map(|i| ((i + 1) as f64).sin()).collect()).unwrap();
    let w = g.constant(w);
    let p = g.mul(out, w).unwrap();
    g.sum_all(p)
}

fn value(build: &Build, inputs: &[Tensor]) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = build(&mut g, &vars);
    let s = scalar(&mut g, out);
    g.value(s).data()[0]
}

/// Largest norm-wise relative error between backward and central
/// differences, over all inputs.
pub fn max_rel_err(build: &Build, inputs: Vec<Tensor>) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars);
    let s = scalar(&mut g, out);
    let grads = g.backward(s).unwrap();
    let mut worst: f64 = 0.0;
    for (k, t) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[k]).map(<[f64]>::to_vec).unwrap_or(vec![0.0; t.numel()]);
        let mut num2 = 0.0;
        let mut diff2 = 0.0;
        let mut an2 = 0.0;
        for (i, a) in analytic.iter().enumerate() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[i] += FD_STEP;
            let mut minus = inputs.clone();
            minus[k].data_mut()[i] -= FD_STEP;
            let fd = (value(build, &plus) - value(build, &minus)) / (2.0 * FD_STEP);
            num2 += fd * fd;
            an2 += a * a;
            diff2 += (fd - a) * (fd - a);
        }
        let scale = num2.sqrt().max(an2.sqrt());
        worst = worst.max(if scale == 0.0 {
            diff2.sqrt()
        } else {
            diff2.sqrt() / scale
        });
    }
    worst
}

/// Relative error of `analytic` against central differences of `f` at `x`.
pub fn fd_rel_err(f: impl Fn(&[f64]) -> f64, x: &[f64], analytic: &[f64]) -> f64 {
    let (mut d2, mut n2) = (0.0, 0.0);
    for i in 0..x.len() {
        let mut p = x.to_vec();
        p[i] += FD_STEP;
        let mut m = x.to_vec();
        m[i] -= FD_STEP;
        let fd = (f(&p) - f(&m)) / (2.0 * FD_STEP);
        d2 += (fd - analytic[i]).powi(2);
        n2 += fd * fd;
    }
    assert!(n2 > 0.0, "flat loss, the check would be vacuous");
    d2.sqrt() / n2.sqrt()
}

/// Transductive loss as a double sum, with argmax pseudo-classes.
pub fn tta_brute(zv: &Tensor, classes: &Tensor, tau: f64) -> f64 {
    let v: Vec<Vec<f64>> = rows(zv).iter().map(|r| unit(r)).collect();
    let c: Vec<Vec<f64>> = rows(classes).iter().map(|r| unit(r)).collect();
    let b = v.len();
    let mut zt = Vec::new();
    for vi in &v {
        let mut best = 0;
        for k in 0..c.len() {
            if dot(vi, &c[k]) > dot(vi, &c[best]) {
                best = k;
            }
        }
        zt.push(c[best].clone());
    }
    let mut loss = 0.0;
    for i in 0..b {
        let mut qden = 0.0;
        let mut pden = 0.0;
        for j in 0..b {
            qden += ((dot(&v[i], &v[j]) + dot(&zt[i], &zt[j])) / (2.0 * tau)).exp();
            pden += (dot(&v[i], &zt[j]) / tau).exp();
        }
        for j in 0..b {
            let q = ((dot(&v[i], &v[j]) + dot(&zt[i], &zt[j])) / (2.0 * tau)).exp() / qden;
            let p = (dot(&v[i], &zt[j]) / tau).exp() / pden;
            loss -= q * p.ln();
        }
    }
    loss / b as f64
}

/// Softmax of `logits` and the mean entropy of its rows.
pub fn entropy_brute(logits: &Tensor) -> (Tensor, f64) {
    let mut p = Vec::new();
    let mut h = 0.0;
    for row in rows(logits) {
        let z: f64 = row.iter().map(|x| x.exp()).sum();
        for x in &row {
            let pi = x.exp() / z;
            p.push(pi);
            h -= pi * pi.ln();
        }
    }
    (
        Tensor::new(logits.shape().to_vec(), p).unwrap(),
        h / logits.rows() as f64,
    )
}

/// Symmetric InfoNCE over unit rows, both directions averaged.
pub fn contrastive_brute(img: &[Vec<f64>], txt: &[Vec<f64>], t: f64) -> f64 {
    let b = img.len();
    let mut i2t = 0.0;
    let mut t2i = 0.0;
    for i in 0..b {
        let row: f64 = (0..b).map(|j| (dot(&img[i], &txt[j]) / t).exp()).sum();
        let col: f64 = (0..b).map(|j| (dot(&img[j], &txt[i]) / t).exp()).sum();
        let pos = (dot(&img[i], &txt[i]) / t).exp();
        i2t -= (pos / row).ln();
        t2i -= (pos / col).ln();
    }
    (i2t + t2i) / (2.0 * b as f64)
}
