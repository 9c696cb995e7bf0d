use crate::error::{Result, WattError};

/// Character-level vocabulary: lowercase letters, digits, space, braces and
/// the punctuation that appears in prompt templates.
pub const VOCAB: &str = "abcdefghijklmnopqrstuvwxyz0123456789 {}.,'-_!?:;()/";

pub fn vocab_size() -> usize {
    VOCAB.chars().count()
}

pub fn tokenize(prompt: &str, max_len: usize) -> Result<Vec<usize>> {
    if prompt.is_empty() {
        return Err(WattError::invalid("empty prompt"));
    }
    let ids = prompt
        .chars()
        .map(|ch| {
            VOCAB
                .chars()
                .position(|v| v == ch)
                .ok_or_else(|| WattError::Vocabulary {
                    ch,
                    prompt: prompt.to_string(),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    if ids.len() > max_len {
        return Err(WattError::invalid(format!(
            "prompt {prompt:?} has {} characters, limit is {max_len}",
            ids.len()
        )));
    }
    Ok(ids)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizes_templates() {
        let ids = tokenize("a photo of a {}", 64).unwrap();
        assert_eq!(ids.len(), 15);
        assert_eq!(ids[0], 0);
    }

    #[test]
    fn rejects_out_of_vocabulary() {
        let err = tokenize("a Photo", 64).unwrap_err().to_string();
        assert!(err.contains("'P'") && err.contains("a Photo"));
        assert!(tokenize("", 64).is_err());
        assert!(tokenize("aaaa", 3).is_err());
    }
}
