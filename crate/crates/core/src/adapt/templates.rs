use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Result, WattError};
use crate::model::ClipModel;
use crate::pretrain::class_prompts;

pub const DEFAULT_TEMPLATES: [&str; 8] = [
    "a photo of a {}",
    "itap of a {}",
    "a bad photo of the {}",
    "a origami {}",
    "a photo of the large {}",
    "a {} in a video game",
    "art of the {}",
    "a photo of the small {}",
];

/// Ordered prompt templates, each with one `{}` class-name slot.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct TemplateSet {
    templates: Vec<String>,
}

impl TemplateSet {
    /// Distinct templates, at least one.
    pub fn new(templates: Vec<String>) -> Result<Self> {
        let set = TemplateSet::with_repeats(templates)?;
        for (i, t) in set.templates.iter().enumerate() {
            if set.templates[..i].contains(t) {
                return Err(WattError::invalid(format!("template {t:?} is listed twice")));
            }
        }
        Ok(set)
    }

    /// Like [`TemplateSet::new`] but allows repeated templates; used to check
    /// that averaging identical branches is an identity.
    pub fn with_repeats(templates: Vec<String>) -> Result<Self> {
        if templates.is_empty() {
            return Err(WattError::invalid("a template set needs at least one template"));
        }
        for t in &templates {
            if t.matches("{}").count() != 1 {
                return Err(WattError::invalid(format!(
                    "template {t:?} needs exactly one `{{}}` slot"
                )));
            }
        }
        Ok(TemplateSet { templates })
    }

    pub fn default_set() -> Self {
        TemplateSet::new(DEFAULT_TEMPLATES.iter().map(|s| s.to_string()).collect()).expect("defaults are valid")
    }

    /// The first `n` default templates.
    pub fn default_prefix(n: usize) -> Result<Self> {
        if n == 0 || n > DEFAULT_TEMPLATES.len() {
            return Err(WattError::invalid(format!("template count must be in 1..=8, got {n}")));
        }
        TemplateSet::new(DEFAULT_TEMPLATES[..n].iter().map(|s| s.to_string()).collect())
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn get(&self, i: usize) -> &str {
        &self.templates[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.templates.iter().map(String::as_str)
    }

    pub fn select(&self, indices: &[usize]) -> Result<TemplateSet> {
        TemplateSet::with_repeats(indices.iter().map(|&i| self.templates[i].clone()).collect())
    }
}

impl TryFrom<Vec<String>> for TemplateSet {
    type Error = WattError;

    fn try_from(v: Vec<String>) -> Result<Self> {
        TemplateSet::new(v)
    }
}

impl From<TemplateSet> for Vec<String> {
    fn from(t: TemplateSet) -> Self {
        t.templates
    }
}

/// Class-prompt embeddings of every template under the frozen text encoder,
/// one `[K, D]` matrix per template.
#[derive(Clone, Debug, PartialEq)]
pub struct TextBank {
    templates: TemplateSet,
    class_names: Vec<String>,
    embeddings: Vec<Tensor>,
}

impl TextBank {
    pub fn new(model: &ClipModel, templates: &TemplateSet, class_names: &[String]) -> Result<Self> {
        if class_names.len() < 2 {
            return Err(WattError::invalid("classification needs at least 2 classes"));
        }
        let embeddings = templates
            .iter()
            .map(|t| model.encode_text(&class_prompts(t, class_names)))
            .collect::<Result<Vec<_>>>()?;
        Ok(TextBank {
            templates: templates.clone(),
            class_names: class_names.to_vec(),
            embeddings,
        })
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.templates
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    pub fn embedding(&self, h: usize) -> &Tensor {
        &self.embeddings[h]
    }

    /// Bank restricted to the given template indices (repeats allowed).
    pub fn select(&self, indices: &[usize]) -> Result<TextBank> {
        Ok(TextBank {
            templates: self.templates.select(indices)?,
            class_names: self.class_names.clone(),
            embeddings: indices.iter().map(|&i| self.embeddings[i].clone()).collect(),
        })
    }

    /// Per-class mean of the template embeddings, not re-normalized.
    pub fn ensemble(&self) -> Tensor {
        mean_tensors(&self.embeddings)
    }
}

/// Elementwise running mean of equally shaped tensors.
pub(crate) fn mean_tensors(ts: &[Tensor]) -> Tensor {
    let mut acc = ts[0].clone();
    for (k, t) in ts.iter().enumerate().skip(1) {
        let inv = (k + 1) as f64;
        for (a, &x) in acc.data_mut().iter_mut().zip(t.data()) {
            *a += (x - *a) / inv;
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_eight_distinct_templates() {
        let t = TemplateSet::default_set();
        assert_eq!(t.len(), 8);
        assert_eq!(t.get(0), "a photo of a {}");
    }

    #[test]
    fn rejects_duplicates_and_bad_slots() {
        assert!(TemplateSet::new(vec!["a {}".into(), "a {}".into()]).is_err());
        assert!(TemplateSet::with_repeats(vec!["a {}".into(), "a {}".into()]).is_ok());
        assert!(TemplateSet::new(vec!["no slot".into()]).is_err());
        assert!(TemplateSet::new(vec![]).is_err());
    }

    #[test]
    fn serde_round_trip_validates() {
        let t = TemplateSet::default_prefix(3).unwrap();
        let s = serde_json::to_string(&t).unwrap();
        assert_eq!(serde_json::from_str::<TemplateSet>(&s).unwrap(), t);
        assert!(serde_json::from_str::<TemplateSet>("[\"x\"]").is_err());
    }
}
