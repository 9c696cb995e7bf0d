use indexmap::IndexMap;

use crate::autodiff::{Gradients, Graph, Var};
use crate::error::{Result, WattError};
use crate::model::{ParamGrads, ParameterSet};

/// Parameters placed on a tape as leaves, looked up by name during the forward pass.
pub struct Bound {
    vars: IndexMap<String, Var>,
}

impl Bound {
    /// Binds every parameter accepted by `include`; those accepted by
    /// `trainable` become gradient-carrying leaves.
    pub fn bind(
        g: &mut Graph,
        params: &ParameterSet,
        include: impl Fn(&str) -> bool,
        trainable: impl Fn(&str) -> bool,
    ) -> Bound {
        let vars = params
            .iter()
            .filter(|(name, _)| include(name))
            .map(|(name, t)| (name.to_string(), g.leaf(t.clone(), trainable(name))))
            .collect();
        Bound { vars }
    }

    /// Binds the `include`d parameters of `base` as constants, except those
    /// present in `trainable`, which are bound from `trainable` with gradients.
    pub fn bind_with_overrides(
        g: &mut Graph,
        base: &ParameterSet,
        trainable: &ParameterSet,
        include: impl Fn(&str) -> bool,
    ) -> Result<Bound> {
        let mut vars = IndexMap::new();
        for (name, t) in base.iter().filter(|(name, _)| include(name)) {
            let v = match trainable.get(name) {
                Some(o) if o.shape() == t.shape() => g.leaf(o.clone(), true),
                Some(o) => return Err(WattError::shape("bind", t.shape(), o.shape())),
                None => g.leaf(t.clone(), false),
            };
            vars.insert(name.to_string(), v);
        }
        for name in trainable.names() {
            if !vars.contains_key(name) {
                return Err(WattError::invalid(format!(
                    "trainable parameter `{name}` is not in the model"
                )));
            }
        }
        Ok(Bound { vars })
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| WattError::invalid(format!("parameter `{name}` is not bound")))
    }

    /// Gradients of every trainable bound parameter, in binding order.
    pub fn collect_grads(&self, g: &Graph, grads: &Gradients) -> ParamGrads {
        let mut out = ParamGrads::new();
        for (name, &v) in &self.vars {
            if let Some(gr) = grads.get(v) {
                if g.requires_grad(v) {
                    out.insert(name.clone(), gr.to_vec());
                }
            }
        }
        out
    }
}

pub fn linear(g: &mut Graph, b: &Bound, prefix: &str, x: Var, bias: bool) -> Result<Var> {
    let w = b.get(&format!("{prefix}.weight"))?;
    let y = g.matmul(x, w)?;
    if bias {
        let bb = b.get(&format!("{prefix}.bias"))?;
        g.add(y, bb)
    } else {
        Ok(y)
    }
}

pub fn layer_norm(g: &mut Graph, b: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let gamma = b.get(&format!("{prefix}.gamma"))?;
    let beta = b.get(&format!("{prefix}.beta"))?;
    let axis = g.shape(x).len() - 1;
    g.layer_norm(x, gamma, beta, axis)
}

/// Multi-head self-attention over `x: [B, T, d]`.
pub fn self_attention(g: &mut Graph, b: &Bound, prefix: &str, x: Var, heads: usize) -> Result<Var> {
    let d = g.shape(x)[2];
    let dh = d / heads;
    let qkv = linear(g, b, &format!("{prefix}.qkv"), x, true)?;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let q = g.slice(qkv, 2, h * dh, dh)?;
        let k = g.slice(qkv, 2, d + h * dh, dh)?;
        let v = g.slice(qkv, 2, 2 * d + h * dh, dh)?;
        let kt = g.transpose(k)?;
        let scores = g.matmul(q, kt)?;
        let scores = g.scale(scores, scale);
        let attn = g.softmax(scores, 2)?;
        outs.push(g.matmul(attn, v)?);
    }
    let merged = if heads == 1 { outs[0] } else { g.concat(&outs, 2)? };
    linear(g, b, &format!("{prefix}.out"), merged, true)
}

/// Pre-LN transformer block.
pub fn transformer_block(g: &mut Graph, b: &Bound, prefix: &str, x: Var, heads: usize) -> Result<Var> {
    let h = layer_norm(g, b, &format!("{prefix}.ln1"), x)?;
    let h = self_attention(g, b, &format!("{prefix}.attn"), h, heads)?;
    let x = g.add(x, h)?;
    let h = layer_norm(g, b, &format!("{prefix}.ln2"), x)?;
    let h = linear(g, b, &format!("{prefix}.mlp.fc1"), h, true)?;
    let h = g.gelu(h);
    let h = linear(g, b, &format!("{prefix}.mlp.fc2"), h, true)?;
    g.add(x, h)
}
