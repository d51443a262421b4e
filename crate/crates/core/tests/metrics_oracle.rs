mod support;

use hgt_core::metrics::{
    accuracy, bleu_corpus, bleu_sentence_avg, perplexity, precision, recall, Averaging, BleuStats,
    ConfusionMatrix,
};
use proptest::prelude::*;
use support::oracles;

fn corpus_strategy() -> impl Strategy<Value = (Vec<Vec<String>>, Vec<Vec<String>>)> {
    let sentence = || {
        prop::collection::vec(
            prop::sample::select(vec!["a", "b", "c", "d", "e"]).prop_map(str::to_string),
            0..=12,
        )
    };
    (1usize..=10).prop_flat_map(move |n| {
        (
            prop::collection::vec(sentence(), n),
            prop::collection::vec(sentence(), n),
        )
    })
}

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn corpus_bleu_matches_oracle((refs, hyps) in corpus_strategy()) {
        let got = bleu_corpus(&refs, &hyps, 4).unwrap();
        let (score, p, bp) = oracles::bleu_corpus(&refs, &hyps);
        prop_assert!((got.score - score).abs() <= 1e-12);
        prop_assert!((got.bp - bp).abs() <= 1e-12);
        for (a, b) in got.precisions.iter().zip(&p) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        prop_assert!((0.0..=1.0).contains(&got.score));
        prop_assert!(got.bp <= 1.0);
        let total_h: usize = hyps.iter().map(Vec::len).sum();
        let total_r: usize = refs.iter().map(Vec::len).sum();
        prop_assert_eq!(got.bp == 1.0, total_h >= total_r);
    }

    #[test]
    fn sentence_bleu_matches_oracle((refs, hyps) in corpus_strategy()) {
        let got = bleu_sentence_avg(&refs, &hyps, 0.1).unwrap();
        prop_assert!((got.score - oracles::bleu_sentence_avg(&refs, &hyps, 0.1)).abs() <= 1e-12);
    }

    #[test]
    fn corpus_bleu_is_order_free((refs, hyps) in corpus_strategy(), seed in any::<u64>()) {
        let mut idx: Vec<usize> = (0..refs.len()).collect();
        // Deterministic shuffle from the seed.
        let mut s = seed;
        for i in (1..idx.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            idx.swap(i, (s >> 33) as usize % (i + 1));
        }
        let r2: Vec<_> = idx.iter().map(|&i| refs[i].clone()).collect();
        let h2: Vec<_> = idx.iter().map(|&i| hyps[i].clone()).collect();
        prop_assert_eq!(
            bleu_corpus(&refs, &hyps, 4).unwrap().score,
            bleu_corpus(&r2, &h2, 4).unwrap().score
        );
    }

    #[test]
    fn bleu_stats_merge_is_associative((refs, hyps) in corpus_strategy()) {
        let s: Vec<BleuStats> = refs.iter().zip(&hyps).map(|(r, h)| BleuStats::from_pair(r, h, 4)).collect();
        let left = s.iter().fold(BleuStats::default(), |a, b| a.merge(b));
        let right = s.iter().rev().fold(BleuStats::default(), |a, b| b.merge(&a));
        prop_assert_eq!(left, right);
    }

    #[test]
    fn micro_scores_equal_accuracy(pairs in prop::collection::vec((0usize..5, 0usize..5), 1..80)) {
        let cm = ConfusionMatrix::from_pairs(5, pairs).unwrap();
        let acc = accuracy(&cm).unwrap();
        prop_assert!((precision(&cm, Averaging::Micro).unwrap().value - acc).abs() < 1e-12);
        prop_assert!((recall(&cm, Averaging::Micro).unwrap().value - acc).abs() < 1e-12);
    }

    #[test]
    fn confusion_merge_is_associative(
        a in prop::collection::vec((0usize..4, 0usize..4), 0..30),
        b in prop::collection::vec((0usize..4, 0usize..4), 0..30),
        c in prop::collection::vec((0usize..4, 0usize..4), 0..30),
    ) {
        let [a, b, c] = [a, b, c].map(|p| ConfusionMatrix::from_pairs(4, p).unwrap());
        prop_assert_eq!(a.merge(&b).merge(&c), a.merge(&b.merge(&c)));
    }
}

#[test]
fn repeated_bigram_example() {
    let refs = vec![toks("the cat sat on the mat")];
    let hyps = vec![toks("the cat the cat on the mat")];
    let got = bleu_corpus(&refs, &hyps, 4).unwrap();
    let (score, p, bp) = oracles::bleu_corpus(&refs, &hyps);
    assert_eq!(got.precisions, p);
    assert_eq!(got.bp, bp);
    assert_eq!(got.score, score);
    // Hand counts: unigrams 5/7 after clipping "the" and "cat", bigrams 3/6.
    assert_eq!(got.precisions[0], 5.0 / 7.0);
    assert_eq!(got.precisions[1], 3.0 / 6.0);
    assert_eq!(got.bp, 1.0);
}

#[test]
fn uniform_perplexity_is_vocab_size() {
    for v in [2usize, 10, 97] {
        let lp = vec![-(v as f64).ln(); 13];
        assert!((perplexity(&lp).unwrap() - v as f64).abs() < 1e-9);
    }
}
