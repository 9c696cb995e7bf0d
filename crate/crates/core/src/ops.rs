//! Gradient-free row operations on 2-D tensors.

use crate::autodiff::gemm_nt_acc;
use crate::autodiff::Tensor;
use crate::error::{Result, WattError};

fn check_2d(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    if t.ndim() != 2 {
        return Err(WattError::invalid(format!(
            "{op} needs a 2-D tensor, got shape {:?}",
            t.shape()
        )));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

/// `a · bᵀ` for `a: [m, d]`, `b: [n, d]`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, d) = check_2d("matmul_nt", a)?;
    let (n, d2) = check_2d("matmul_nt", b)?;
    if d != d2 {
        return Err(WattError::shape("matmul_nt", a.shape(), b.shape()));
    }
    let mut out = vec![0.0; m * n];
    gemm_nt_acc(a.data(), b.data(), &mut out, m, d, n);
    Tensor::new(vec![m, n], out)
}

/// Rows scaled to unit L2 norm; zero rows stay zero.
pub fn normalize_rows(t: &Tensor) -> Result<Tensor> {
    let (_, d) = check_2d("normalize_rows", t)?;
    let mut out = t.data().to_vec();
    for row in out.chunks_mut(d) {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        row.iter_mut().for_each(|v| *v /= norm);
    }
    Tensor::new(t.shape().to_vec(), out)
}

/// Cosine similarities `cos(a_i, b_j)`.
pub fn cosine_matrix(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    matmul_nt(&normalize_rows(a)?, &normalize_rows(b)?)
}

/// Row-wise log-softmax of `logits / temperature`, max-shifted.
pub fn log_softmax_rows(logits: &Tensor, temperature: f64) -> Result<Tensor> {
    let (_, n) = check_2d("log_softmax_rows", logits)?;
    let mut out = Vec::with_capacity(logits.numel());
    for row in logits.data().chunks(n) {
        let scaled: Vec<f64> = row.iter().map(|v| v / temperature).collect();
        let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + scaled.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        out.extend(scaled.iter().map(|v| v - lse));
    }
    Tensor::new(logits.shape().to_vec(), out)
}

/// Row-wise softmax of `logits / temperature`, max-shifted.
pub fn softmax_rows(logits: &Tensor, temperature: f64) -> Result<Tensor> {
    let (_, n) = check_2d("softmax_rows", logits)?;
    let mut out = Vec::with_capacity(logits.numel());
    for row in logits.data().chunks(n) {
        let scaled: Vec<f64> = row.iter().map(|v| v / temperature).collect();
        let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = scaled.iter().map(|v| (v - max).exp()).collect();
        let z: f64 = e.iter().sum();
        out.extend(e.iter().map(|v| v / z));
    }
    Tensor::new(logits.shape().to_vec(), out)
}

/// Index of the largest entry per row; the lowest index wins ties.
pub fn argmax_rows(t: &Tensor) -> Result<Vec<usize>> {
    let (_, n) = check_2d("argmax_rows", t)?;
    Ok(t.data()
        .chunks(n)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect())
}

/// Stacks the given rows of `t` into a new `[ids.len(), d]` tensor.
pub fn gather_rows(t: &Tensor, ids: &[usize]) -> Result<Tensor> {
    let (m, d) = check_2d("gather_rows", t)?;
    let mut out = Vec::with_capacity(ids.len() * d);
    for &i in ids {
        if i >= m {
            return Err(WattError::invalid(format!("row {i} out of range for {m} rows")));
        }
        out.extend_from_slice(t.row(i));
    }
    Tensor::new(vec![ids.len(), d], out)
}
