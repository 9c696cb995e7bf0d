use indexmap::IndexMap;

use crate::error::{Result, WattError};
use crate::model::{ParamGrads, ParameterSet};

pub const DEFAULT_LR: f64 = 1e-3;

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step_count: u64,
    first_moment: IndexMap<String, Vec<f64>>,
    second_moment: IndexMap<String, Vec<f64>>,
}

impl Default for AdamState {
    fn default() -> Self {
        AdamState::new(DEFAULT_LR)
    }
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            first_moment: IndexMap::new(),
            second_moment: IndexMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moment(&self, name: &str) -> Option<&[f64]> {
        self.first_moment.get(name).map(Vec::as_slice)
    }

    pub fn second_moment(&self, name: &str) -> Option<&[f64]> {
        self.second_moment.get(name).map(Vec::as_slice)
    }
}

/// One Adam update of every entry in `params`, then zeroes `grads`.
pub fn adam_step(params: &mut ParameterSet, grads: &mut ParamGrads, state: &mut AdamState) -> Result<()> {
    for (name, value) in params.iter() {
        match grads.get(name) {
            Some(g) if g.len() == value.numel() => {}
            Some(g) => {
                return Err(WattError::shape("adam_step", value.shape(), &[g.len()]));
            }
            None => return Err(WattError::MissingGradient(name.to_string())),
        }
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, eps, lr) = (state.beta1, state.beta2, state.eps, state.lr);
    for (name, value) in params.iter_mut() {
        let g = grads.get(name).expect("checked above");
        let n = value.numel();
        let m = state
            .first_moment
            .entry(name.to_string())
            .or_insert_with(|| vec![0.0; n]);
        let v = state
            .second_moment
            .entry(name.to_string())
            .or_insert_with(|| vec![0.0; n]);
        for (((p, &gi), mi), vi) in value.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    grads.zero();
    Ok(())
}
