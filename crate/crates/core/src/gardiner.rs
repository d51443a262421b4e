//! Gardiner sign codes, the sign lexicon and Gardiner-sequence to
//! transliteration conversion.
//!
//! Transliterations use the ASCII Manuel de Codage alphabet.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GardinerError {
    #[error("bad category in {0:?}")]
    BadCategory(String),
    #[error("bad number in {0:?}")]
    BadNumber(String),
    #[error("trailing characters in {0:?}")]
    TrailingGarbage(String),
    #[error("unknown Gardiner code {0}")]
    UnknownCode(String),
    #[error("line {line}: duplicate code {code}")]
    DuplicateCode { line: usize, code: String },
    #[error("line {line}: {message}")]
    InvariantViolation { line: usize, message: String },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, GardinerError>;

/// Sign-list section. Gardiner's list has no J section.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    /// Single-letter sections `A`–`Z` except `J`, stored as the ASCII byte.
    Letter(u8),
    Aa,
    NL,
    NU,
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Category::Letter(b) => write!(f, "{}", *b as char),
            Category::Aa => f.write_str("Aa"),
            Category::NL => f.write_str("NL"),
            Category::NU => f.write_str("NU"),
        }
    }
}

/// A parsed sign identifier such as `V31`, `Aa15` or `G7a`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GardinerCode {
    pub category: Category,
    pub number: u16,
    pub variant: Option<char>,
}

impl fmt::Display for GardinerCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.category, self.number)?;
        if let Some(v) = self.variant {
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Parse a whole string against
/// `category := [A-IK-Z] | "Aa" | "NL" | "NU"`, `number := [1-9][0-9]{0,2}`,
/// `variant := [a-z]?`.
pub fn parse_gardiner(text: &str) -> Result<GardinerCode> {
    let bytes = text.as_bytes();
    let (category, rest) = match bytes {
        [b'A', b'a', ..] => (Category::Aa, 2),
        [b'N', b'L', ..] => (Category::NL, 2),
        [b'N', b'U', ..] => (Category::NU, 2),
        [c, ..] if c.is_ascii_uppercase() && *c != b'J' => (Category::Letter(*c), 1),
        _ => return Err(GardinerError::BadCategory(text.to_string())),
    };
    let digits = bytes[rest..]
        .iter()
        .take_while(|b| b.is_ascii_digit())
        .count();
    let number_text = &text[rest..rest + digits];
    if digits == 0 || digits > 3 || number_text.starts_with('0') {
        return Err(GardinerError::BadNumber(text.to_string()));
    }
    let number: u16 = number_text
        .parse()
        .map_err(|_| GardinerError::BadNumber(text.to_string()))?;
    let mut pos = rest + digits;
    let variant = match bytes.get(pos) {
        Some(b) if b.is_ascii_lowercase() => {
            pos += 1;
            Some(*b as char)
        }
        _ => None,
    };
    if pos != bytes.len() {
        return Err(GardinerError::TrailingGarbage(text.to_string()));
    }
    Ok(GardinerCode {
        category,
        number,
        variant,
    })
}

impl FromStr for GardinerCode {
    type Err = GardinerError;

    fn from_str(s: &str) -> Result<Self> {
        parse_gardiner(s)
    }
}

impl Serialize for GardinerCode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for GardinerCode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        parse_gardiner(&text).map_err(serde::de::Error::custom)
    }
}

/// The 25 letters of the ASCII transliteration alphabet.
pub const MDC_ALPHABET: &str = "AiyawbpfmnrhHxXzsSqkgtTdD";

pub fn is_mdc(text: &str) -> bool {
    text.chars().all(|c| MDC_ALPHABET.contains(c))
}

/// Egyptological display form of an ASCII transliteration (ꜣ, ꞽ, ꜥ, ḥ, ...).
/// Characters outside the alphabet pass through unchanged.
pub fn mdc_to_unicode(text: &str) -> String {
    text.chars()
        .map(|c| match c {
            'A' => 'ꜣ',
            'i' => 'ꞽ',
            'a' => 'ꜥ',
            'H' => 'ḥ',
            'x' => 'ḫ',
            'X' => 'ẖ',
            'S' => 'š',
            'q' => 'ḳ',
            'T' => 'ṯ',
            'D' => 'ḏ',
            other => other,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignKind {
    Uniliteral,
    Biliteral,
    Triliteral,
    Determinative,
    Logogram,
}

impl SignKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SignKind::Uniliteral => "uniliteral",
            SignKind::Biliteral => "biliteral",
            SignKind::Triliteral => "triliteral",
            SignKind::Determinative => "determinative",
            SignKind::Logogram => "logogram",
        }
    }
}

impl FromStr for SignKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "uniliteral" => SignKind::Uniliteral,
            "biliteral" => SignKind::Biliteral,
            "triliteral" => SignKind::Triliteral,
            "determinative" => SignKind::Determinative,
            "logogram" => SignKind::Logogram,
            other => return Err(format!("unknown sign kind {other:?}")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub code: GardinerCode,
    pub kind: SignKind,
    /// Empty exactly when `kind` is determinative.
    pub translit: String,
    pub gloss: String,
}

impl LexiconEntry {
    fn check(&self) -> std::result::Result<(), String> {
        let det = self.kind == SignKind::Determinative;
        if det != self.translit.is_empty() {
            return Err(if det {
                format!(
                    "determinative {} must have an empty transliteration, got {:?}",
                    self.code, self.translit
                )
            } else {
                format!(
                    "{} sign {} needs a transliteration",
                    self.kind.as_str(),
                    self.code
                )
            });
        }
        if !is_mdc(&self.translit) {
            return Err(format!(
                "transliteration {:?} of {} uses characters outside {MDC_ALPHABET}",
                self.translit, self.code
            ));
        }
        if self.gloss.contains(['\t', '\n']) {
            return Err(format!("gloss of {} contains a tab or newline", self.code));
        }
        Ok(())
    }
}

/// The sign lexicon shipped with the crate.
pub const BUNDLED_LEXICON: &str = include_str!("../data/lexicon.tsv");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    pub version: String,
    entries: BTreeMap<GardinerCode, LexiconEntry>,
}

impl Lexicon {
    pub fn bundled() -> Lexicon {
        Lexicon::from_tsv(BUNDLED_LEXICON).expect("bundled lexicon is valid")
    }

    /// Parse `code<TAB>kind<TAB>translit<TAB>gloss` lines. `#` lines are
    /// comments, except `# version: X` which sets the version string.
    pub fn from_tsv(text: &str) -> Result<Lexicon> {
        let mut version = String::new();
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            if let Some(comment) = raw.strip_prefix('#') {
                if let Some(v) = comment.trim().strip_prefix("version:") {
                    version = v.trim().to_string();
                }
                continue;
            }
            if raw.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = raw.split('\t').collect();
            if fields.len() != 4 {
                return Err(GardinerError::Malformed {
                    line,
                    message: format!("expected 4 tab-separated fields, found {}", fields.len()),
                });
            }
            let code = parse_gardiner(fields[0]).map_err(|e| GardinerError::Malformed {
                line,
                message: e.to_string(),
            })?;
            let kind = fields[1]
                .parse()
                .map_err(|message| GardinerError::Malformed { line, message })?;
            let entry = LexiconEntry {
                code,
                kind,
                translit: fields[2].to_string(),
                gloss: fields[3].to_string(),
            };
            entry
                .check()
                .map_err(|message| GardinerError::InvariantViolation { line, message })?;
            if entries.insert(code, entry).is_some() {
                return Err(GardinerError::DuplicateCode {
                    line,
                    code: code.to_string(),
                });
            }
        }
        Ok(Lexicon { version, entries })
    }

    /// Canonical TSV: version header, then entries ordered by code.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("# version: {}\n", self.version);
        for e in self.entries.values() {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                e.code,
                e.kind.as_str(),
                e.translit,
                e.gloss
            ));
        }
        out
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &LexiconEntry> {
        self.entries.values()
    }

    pub fn get(&self, code: &GardinerCode) -> Option<&LexiconEntry> {
        self.entries.get(code)
    }
}

pub fn load_lexicon(path: impl AsRef<Path>) -> Result<Lexicon> {
    let text = std::fs::read_to_string(path).map_err(|e| GardinerError::Io(e.to_string()))?;
    Lexicon::from_tsv(&text)
}

pub fn lookup<'a>(code: &GardinerCode, lex: &'a Lexicon) -> Result<&'a LexiconEntry> {
    lex.get(code)
        .ok_or_else(|| GardinerError::UnknownCode(code.to_string()))
}

/// Transliteration of a sign sequence plus the codes that produced no
/// phonetic token.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transliteration {
    pub tokens: Vec<String>,
    /// Determinatives and unknown codes, in input order.
    pub dropped: Vec<GardinerCode>,
}

pub fn unknown_token(code: &GardinerCode) -> String {
    format!("<unk-{code}>")
}

/// Map signs to transliteration tokens in order. Determinatives contribute
/// nothing; unknown codes become `<unk-CODE>` tokens. Both are listed in
/// `dropped`, so a damaged plate still yields partial output.
pub fn sequence_to_translit(codes: &[GardinerCode], lex: &Lexicon) -> Transliteration {
    let mut out = Transliteration::default();
    for code in codes {
        match lex.get(code) {
            Some(e) if e.kind == SignKind::Determinative => out.dropped.push(*code),
            Some(e) => out.tokens.push(e.translit.clone()),
            None => {
                out.tokens.push(unknown_token(code));
                out.dropped.push(*code);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn code(s: &str) -> GardinerCode {
        parse_gardiner(s).unwrap()
    }

    #[test]
    fn parses_table_codes() {
        let v31 = code("V31");
        assert_eq!(v31.category, Category::Letter(b'V'));
        assert_eq!(v31.number, 31);
        assert_eq!(v31.variant, None);
        let aa15 = code("Aa15");
        assert_eq!((aa15.category, aa15.number), (Category::Aa, 15));
        let g7a = code("G7a");
        assert_eq!((g7a.number, g7a.variant), (7, Some('a')));
        assert_eq!(code("NL12").category, Category::NL);
        assert_eq!(code("NU3").category, Category::NU);
        assert_eq!(code("N35").category, Category::Letter(b'N'));
    }

    #[test]
    fn rejects_malformed_codes() {
        use GardinerError::*;
        assert_eq!(parse_gardiner("31V"), Err(BadCategory("31V".into())));
        assert_eq!(parse_gardiner("V031"), Err(BadNumber("V031".into())));
        assert_eq!(parse_gardiner("V0"), Err(BadNumber("V0".into())));
        assert_eq!(parse_gardiner("V1000"), Err(BadNumber("V1000".into())));
        assert_eq!(parse_gardiner("J1"), Err(BadCategory("J1".into())));
        assert_eq!(parse_gardiner(""), Err(BadCategory("".into())));
        assert_eq!(parse_gardiner("V"), Err(BadNumber("V".into())));
        assert_eq!(
            parse_gardiner("V31ab"),
            Err(TrailingGarbage("V31ab".into()))
        );
        assert_eq!(parse_gardiner("V31 "), Err(TrailingGarbage("V31 ".into())));
        assert_eq!(parse_gardiner("v31"), Err(BadCategory("v31".into())));
    }

    #[test]
    fn bundled_lookups() {
        let lex = Lexicon::bundled();
        let v31 = lookup(&code("V31"), &lex).unwrap();
        assert_eq!(
            (v31.kind, v31.translit.as_str()),
            (SignKind::Uniliteral, "k")
        );
        let z1 = lookup(&code("Z1"), &lex).unwrap();
        assert_eq!(
            (z1.kind, z1.translit.as_str()),
            (SignKind::Determinative, "")
        );
        assert_eq!(
            lookup(&code("Z999"), &lex),
            Err(GardinerError::UnknownCode("Z999".into()))
        );
    }

    #[test]
    fn translit_examples() {
        let lex = Lexicon::bundled();
        let t = sequence_to_translit(&[code("M17"), code("I9")], &lex);
        assert_eq!(t.tokens, vec!["i", "f"]);
        assert!(t.dropped.is_empty());
        let t = sequence_to_translit(&[code("Z1")], &lex);
        assert!(t.tokens.is_empty());
        assert_eq!(t.dropped, vec![code("Z1")]);
        assert_eq!(sequence_to_translit(&[], &lex), Transliteration::default());
        let t = sequence_to_translit(&[code("G17"), code("Z999")], &lex);
        assert_eq!(t.tokens, vec!["m", "<unk-Z999>"]);
        assert_eq!(t.dropped, vec![code("Z999")]);
    }

    #[test]
    fn tsv_loading_rules() {
        let ok = "V31\tuniliteral\tk\tbasket\nZ1\tdeterminative\t\tstroke\n";
        assert_eq!(Lexicon::from_tsv(ok).unwrap().len(), 2);

        let dup = "V31\tuniliteral\tk\tbasket\nV31\tuniliteral\tk\tbasket\n";
        assert_eq!(
            Lexicon::from_tsv(dup),
            Err(GardinerError::DuplicateCode {
                line: 2,
                code: "V31".into()
            })
        );

        let bad = "# comment\nZ1\tdeterminative\tk\tstroke\n";
        assert!(matches!(
            Lexicon::from_tsv(bad),
            Err(GardinerError::InvariantViolation { line: 2, .. })
        ));
        let bad_alphabet = "V31\tuniliteral\tj\tbasket\n";
        assert!(matches!(
            Lexicon::from_tsv(bad_alphabet),
            Err(GardinerError::InvariantViolation { line: 1, .. })
        ));
        let missing = "V31\tuniliteral\t\tbasket\n";
        assert!(matches!(
            Lexicon::from_tsv(missing),
            Err(GardinerError::InvariantViolation { .. })
        ));
    }

    #[test]
    fn bundled_file_is_canonical() {
        let lex = Lexicon::bundled();
        assert_eq!(lex.to_tsv(), BUNDLED_LEXICON);
        for e in lex.entries() {
            assert_eq!(parse_gardiner(&e.code.to_string()).unwrap(), e.code);
        }
        for sample in ["V31", "Z1", "M17", "I9"] {
            assert!(lex.get(&code(sample)).is_some(), "{sample} missing");
        }
    }

    #[test]
    fn unicode_display() {
        assert_eq!(mdc_to_unicode("Htp"), "ḥtp");
        assert_eq!(mdc_to_unicode("anx"), "ꜥnḫ");
    }
}
