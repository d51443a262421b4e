use std::path::Path;

use super::{Result, TranslatorError};

/// Bundled 50-pair transliteration → English corpus.
pub const TOY_CORPUS: &str = include_str!("../../data/toy_corpus.tsv");

/// `source<TAB>target` lines. Blank lines and `#` comments are skipped;
/// both sides must be non-empty.
pub fn parse_parallel_corpus(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: &str| TranslatorError::Corpus {
            line: n + 1,
            msg: msg.to_string(),
        };
        let (src, tgt) = line
            .split_once('\t')
            .ok_or_else(|| err("expected source<TAB>target"))?;
        if src.trim().is_empty() || tgt.trim().is_empty() {
            return Err(err("empty side"));
        }
        pairs.push((src.trim().to_string(), tgt.trim().to_string()));
    }
    Ok(pairs)
}

pub fn load_parallel_corpus(path: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    parse_parallel_corpus(&std::fs::read_to_string(path)?)
}

pub fn toy_corpus() -> Vec<(String, String)> {
    parse_parallel_corpus(TOY_CORPUS).expect("bundled corpus parses")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_corpus_has_fifty_pairs() {
        assert_eq!(toy_corpus().len(), 50);
    }

    #[test]
    fn malformed_lines() {
        assert!(parse_parallel_corpus("no tab here").is_err());
        assert!(parse_parallel_corpus("a\t ").is_err());
        assert_eq!(parse_parallel_corpus("# c\n\na b\tx y\n").unwrap().len(), 1);
    }
}
