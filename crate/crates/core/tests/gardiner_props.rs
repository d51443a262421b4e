use hgt_core::gardiner::{
    is_mdc, parse_gardiner, sequence_to_translit, unknown_token, GardinerError, Lexicon, SignKind,
};
use proptest::prelude::*;

fn code_text() -> impl Strategy<Value = String> {
    let cats: Vec<String> = ('A'..='Z')
        .filter(|&c| c != 'J')
        .map(String::from)
        .chain(["Aa", "NL", "NU"].map(String::from))
        .collect();
    (
        prop::sample::select(cats),
        1u16..=999,
        prop::option::of(prop::char::range('a', 'z')),
    )
        .prop_map(|(c, n, v)| format!("{c}{n}{}", v.map(String::from).unwrap_or_default()))
}

proptest! {
    #[test]
    fn format_parse_roundtrip(text in code_text()) {
        let code = parse_gardiner(&text).unwrap();
        prop_assert_eq!(code.to_string(), text.clone());
        prop_assert_eq!(parse_gardiner(&code.to_string()).unwrap(), code);
    }

    #[test]
    fn translit_tokens_are_mdc_or_unknown(
        picks in prop::collection::vec((any::<prop::sample::Index>(), any::<bool>()), 0..30)
    ) {
        let lex = Lexicon::bundled();
        let entries: Vec<_> = lex.entries().cloned().collect();
        let codes: Vec<_> = picks
            .iter()
            .map(|(i, unknown)| if *unknown {
                parse_gardiner("Z999").unwrap()
            } else {
                i.get(&entries).code
            })
            .collect();
        let t = sequence_to_translit(&codes, &lex);
        let dets = codes
            .iter()
            .filter(|c| lex.get(c).is_some_and(|e| e.kind == SignKind::Determinative))
            .count();
        let unknowns = codes.iter().filter(|c| lex.get(c).is_none()).count();
        prop_assert_eq!(t.tokens.len(), codes.len() - dets);
        prop_assert_eq!(t.dropped.len(), dets + unknowns);
        for tok in &t.tokens {
            prop_assert!(is_mdc(tok) || tok.starts_with("<unk-") && tok.ends_with('>'));
        }
    }
}

#[test]
fn every_bundled_code_roundtrips() {
    let lex = Lexicon::bundled();
    assert!(lex.len() >= 150);
    for e in lex.entries() {
        assert_eq!(parse_gardiner(&e.code.to_string()).unwrap(), e.code);
    }
    assert_eq!(Lexicon::from_tsv(&lex.to_tsv()).unwrap(), lex);
}

#[test]
fn grammar_rejections() {
    assert!(matches!(
        parse_gardiner("31V"),
        Err(GardinerError::BadCategory(_))
    ));
    assert!(matches!(
        parse_gardiner("V031"),
        Err(GardinerError::BadNumber(_))
    ));
    assert!(matches!(
        parse_gardiner("J1"),
        Err(GardinerError::BadCategory(_))
    ));
    assert!(parse_gardiner("V31x7").is_err());
    assert_eq!(
        unknown_token(&parse_gardiner("Z999").unwrap()),
        "<unk-Z999>"
    );
}
