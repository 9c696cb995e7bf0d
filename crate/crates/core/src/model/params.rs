use indexmap::IndexMap;

use crate::autodiff::Tensor;
use crate::error::{Result, WattError};

/// Named, ordered model parameters.
///
/// Order is insertion order and is preserved by subsetting, flattening and
/// checkpointing; it is also the summation order used when averaging.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterSet {
    entries: IndexMap<String, Tensor>,
}

impl ParameterSet {
    pub fn new() -> Self {
        ParameterSet::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(WattError::invalid(format!("duplicate parameter name `{name}`")));
        }
        self.entries.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .ok_or_else(|| WattError::invalid(format!("unknown parameter `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.entries.values().map(Tensor::numel).sum()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Entries whose name satisfies `keep`, in the original order.
    pub fn subset(&self, keep: impl Fn(&str) -> bool) -> ParameterSet {
        ParameterSet {
            entries: self
                .entries
                .iter()
                .filter(|(k, _)| keep(k))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Same names, same order, same shapes.
    pub fn check_congruent(&self, other: &ParameterSet) -> Result<()> {
        if self.len() != other.len() {
            return Err(WattError::invalid(format!(
                "parameter sets differ in size: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        for ((na, ta), (nb, tb)) in self.iter().zip(other.iter()) {
            if na != nb {
                return Err(WattError::invalid(format!("parameter order differs: `{na}` vs `{nb}`")));
            }
            if ta.shape() != tb.shape() {
                return Err(WattError::shape("parameter", ta.shape(), tb.shape()));
            }
        }
        Ok(())
    }

    /// Overwrites the values of every entry of `update` (which must all exist here).
    pub fn assign(&mut self, update: &ParameterSet) -> Result<()> {
        for (name, value) in update.iter() {
            let slot = self
                .entries
                .get_mut(name)
                .ok_or_else(|| WattError::invalid(format!("unknown parameter `{name}`")))?;
            if slot.shape() != value.shape() {
                return Err(WattError::shape("assign", slot.shape(), value.shape()));
            }
            *slot = value.clone();
        }
        Ok(())
    }

    /// Concatenation of all buffers in order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.numel());
        for t in self.entries.values() {
            out.extend_from_slice(t.data());
        }
        out
    }

    /// Inverse of [`flatten`](Self::flatten), using `self` as the layout.
    pub fn with_flat(&self, flat: &[f64]) -> Result<ParameterSet> {
        if flat.len() != self.numel() {
            return Err(WattError::invalid(format!(
                "flat vector has {} values, layout needs {}",
                flat.len(),
                self.numel()
            )));
        }
        let mut offset = 0;
        let mut out = ParameterSet::new();
        for (name, t) in self.iter() {
            let n = t.numel();
            out.insert(
                name,
                Tensor::new(t.shape().to_vec(), flat[offset..offset + n].to_vec())?,
            )?;
            offset += n;
        }
        Ok(out)
    }

    pub fn bit_eq(&self, other: &ParameterSet) -> bool {
        self.len() == other.len()
            && self
                .iter()
                .zip(other.iter())
                .all(|((na, ta), (nb, tb))| na == nb && ta.bit_eq(tb))
    }
}

/// Gradient buffers keyed by parameter name.
#[derive(Clone, Debug, Default)]
pub struct ParamGrads {
    grads: IndexMap<String, Vec<f64>>,
}

impl ParamGrads {
    pub fn new() -> Self {
        ParamGrads::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, grad: Vec<f64>) {
        self.grads.insert(name.into(), grad);
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.grads.get(name).map(Vec::as_slice)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Vec<f64>> {
        self.grads.get_mut(name)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.grads.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn zero(&mut self) {
        for g in self.grads.values_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}
