use std::collections::HashMap;

use super::{Result, TranslatorError};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
/// Id of the first non-reserved token.
pub const FIRST_ORDINARY: usize = 4;

const RESERVED: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Dense token ↔ id map with the four reserved ids first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocab {
    /// Vocabulary from its token list, reserved tokens included.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len() || tokens.iter().zip(RESERVED).any(|(t, r)| t != r) {
            return Err(TranslatorError::InvalidConfig(
                "vocabulary must start with <pad> <bos> <eos> <unk>".into(),
            ));
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i).is_some() {
                return Err(TranslatorError::InvalidConfig(format!(
                    "duplicate vocabulary token {t:?}"
                )));
            }
        }
        Ok(Self { tokens, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map_or("<unk>", String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn is_reserved(id: usize) -> bool {
        id < FIRST_ORDINARY
    }
}

/// Whitespace tokens with at least `min_count` occurrences, ordered by
/// descending count and then alphabetically, after the reserved ids.
pub fn build_vocab<S: AsRef<str>>(lines: &[S], min_count: usize) -> Result<Vocab> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for line in lines {
        for tok in line.as_ref().split_whitespace() {
            *counts.entry(tok).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(TranslatorError::EmptyCorpus);
    }
    let mut kept: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(t, c)| c >= min_count.max(1) && !RESERVED.contains(&t))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let tokens = RESERVED
        .iter()
        .map(|s| s.to_string())
        .chain(kept.into_iter().map(|(t, _)| t.to_string()))
        .collect();
    Vocab::from_tokens(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordering_rule() {
        let v = build_vocab(&["a b", "a"], 1).unwrap();
        assert_eq!(v.id("a"), 4);
        assert_eq!(v.id("b"), 5);
        assert_eq!(v.len(), 6);
    }

    #[test]
    fn min_count_threshold() {
        let v = build_vocab(&["a b", "a"], 2).unwrap();
        assert_eq!(v.id("a"), 4);
        assert_eq!(v.id("b"), UNK);
    }

    #[test]
    fn empty_corpus() {
        assert!(matches!(
            build_vocab::<&str>(&[], 1),
            Err(TranslatorError::EmptyCorpus)
        ));
        assert!(matches!(
            build_vocab(&["  ", ""], 1),
            Err(TranslatorError::EmptyCorpus)
        ));
    }

    #[test]
    fn alphabetical_within_count() {
        let v = build_vocab(&["c b a", "c"], 1).unwrap();
        assert_eq!(&v.tokens()[4..], &["c", "a", "b"]);
    }

    #[test]
    fn reserved_prefix_checked() {
        assert!(Vocab::from_tokens(vec!["a".into()]).is_err());
    }
}
