use serde::{Deserialize, Serialize};

use super::vocab::{EOS, FIRST_ORDINARY};
use super::{EncodedSource, Result, Translator, TranslatorError};

/// Anything that scores the next token given the tokens emitted so far.
pub trait NextTokenModel {
    fn vocab_size(&self) -> usize;
    /// Natural-log probabilities over the whole vocabulary.
    fn next_logprobs(&self, prefix: &[usize]) -> Result<Vec<f64>>;
    fn token_text(&self, id: usize) -> String {
        format!("#{id}")
    }
}

/// A decoded sequence. `ids` and `tokens` include a final `<eos>` when the
/// model emitted one; `logprob_sum` covers every listed token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub ids: Vec<usize>,
    pub tokens: Vec<String>,
    pub logprob_sum: f64,
    pub length: usize,
}

impl Hypothesis {
    fn from_ids<M: NextTokenModel + ?Sized>(m: &M, ids: Vec<usize>, logprob_sum: f64) -> Self {
        Self {
            tokens: ids.iter().map(|&i| m.token_text(i)).collect(),
            length: ids.len(),
            ids,
            logprob_sum,
        }
    }

    pub fn finished(&self) -> bool {
        self.ids.last() == Some(&EOS)
    }

    /// Tokens without the closing `<eos>`.
    pub fn words(&self) -> &[String] {
        if self.finished() {
            &self.tokens[..self.tokens.len() - 1]
        } else {
            &self.tokens
        }
    }
}

/// Emittable ids in preference order: ordinary tokens by id, then `<eos>`.
/// `<pad>`, `<bos>` and `<unk>` are never emitted.
fn candidates(v: usize) -> impl Iterator<Item = usize> {
    (FIRST_ORDINARY..v).chain(std::iter::once(EOS))
}

/// Argmax decoding. Exact ties go to the earlier candidate, so `<eos>` ends
/// the sequence only when strictly most probable.
pub fn greedy_search<M: NextTokenModel + ?Sized>(m: &M, max_len: usize) -> Result<Hypothesis> {
    let mut ids = Vec::new();
    let mut total = 0.0;
    while ids.len() < max_len {
        let lp = m.next_logprobs(&ids)?;
        let mut best: Option<usize> = None;
        for c in candidates(m.vocab_size()) {
            if best.is_none_or(|b| lp[c] > lp[b]) {
                best = Some(c);
            }
        }
        let Some(tok) = best else { break };
        total += lp[tok];
        ids.push(tok);
        if tok == EOS {
            break;
        }
    }
    Ok(Hypothesis::from_ids(m, ids, total))
}

#[derive(Clone)]
struct Beam {
    ids: Vec<usize>,
    score: f64,
}

fn normalized(score: f64, len: usize, alpha: f64) -> f64 {
    if alpha == 0.0 {
        score
    } else {
        score / (len.max(1) as f64).powf(alpha)
    }
}

/// Beam search keeping the `beam` best partial sequences per step by
/// log-probability sum. Sequences finish at `<eos>` or at `max_len`. The
/// result holds up to `beam` finished sequences ranked by
/// `logprob_sum / length^alpha`, best first.
pub fn beam_search<M: NextTokenModel + ?Sized>(
    m: &M,
    beam: usize,
    max_len: usize,
    alpha: f64,
) -> Result<Vec<Hypothesis>> {
    if beam == 0 {
        return Err(TranslatorError::InvalidConfig(
            "beam width must be at least 1".into(),
        ));
    }
    let mut live = vec![Beam {
        ids: Vec::new(),
        score: 0.0,
    }];
    let mut done: Vec<Beam> = Vec::new();
    for _ in 0..max_len {
        if live.is_empty() || done.len() >= beam {
            break;
        }
        // (beam rank, candidate rank, step log-prob, total score)
        let mut expanded: Vec<(usize, usize, f64, f64)> = Vec::new();
        for (bi, b) in live.iter().enumerate() {
            let lp = m.next_logprobs(&b.ids)?;
            for (ci, c) in candidates(m.vocab_size()).enumerate() {
                expanded.push((bi, ci, lp[c], b.score + lp[c]));
            }
        }
        // Highest total first; within equal totals prefer the better parent,
        // then the more probable step, then the candidate order.
        expanded.sort_by(|a, b| {
            b.3.total_cmp(&a.3)
                .then(a.0.cmp(&b.0))
                .then(b.2.total_cmp(&a.2))
                .then(a.1.cmp(&b.1))
        });
        let ordinary: Vec<usize> = candidates(m.vocab_size()).collect();
        let mut next = Vec::with_capacity(beam);
        for &(bi, ci, _, score) in expanded.iter().take(beam) {
            let mut ids = live[bi].ids.clone();
            ids.push(ordinary[ci]);
            let b = Beam { ids, score };
            if ordinary[ci] == EOS {
                done.push(b);
            } else {
                next.push(b);
            }
        }
        live = next;
    }
    done.extend(live);
    done.sort_by(|a, b| {
        normalized(b.score, b.ids.len(), alpha).total_cmp(&normalized(a.score, a.ids.len(), alpha))
    });
    done.truncate(beam);
    Ok(done
        .into_iter()
        .map(|b| Hypothesis::from_ids(m, b.ids, b.score))
        .collect())
}

struct SourceModel<'a> {
    model: &'a Translator,
    enc: EncodedSource,
}

impl NextTokenModel for SourceModel<'_> {
    fn vocab_size(&self) -> usize {
        self.model.tgt_vocab.len()
    }

    fn next_logprobs(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        self.model.next_logprobs(&self.enc, prefix)
    }

    fn token_text(&self, id: usize) -> String {
        self.model.tgt_vocab.token(id).to_string()
    }
}

fn source_model<'a, S: AsRef<str>>(model: &'a Translator, src: &[S]) -> Result<SourceModel<'a>> {
    Ok(SourceModel {
        model,
        enc: model.encode_source(src)?,
    })
}

/// Greedy translation of whitespace tokens.
pub fn greedy_decode<S: AsRef<str>>(
    model: &Translator,
    src: &[S],
    max_len: usize,
) -> Result<Hypothesis> {
    greedy_search(&source_model(model, src)?, max_len)
}

/// Beam-search translation of whitespace tokens.
pub fn beam_decode<S: AsRef<str>>(
    model: &Translator,
    src: &[S],
    beam_width: usize,
    max_len: usize,
    alpha: f64,
) -> Result<Vec<Hypothesis>> {
    beam_search(&source_model(model, src)?, beam_width, max_len, alpha)
}

/// Corpus-level decoding score. `avg_logprob` is the signed mean per-token
/// log-probability; `pred_avg_score` is its magnitude, the conventional
/// display value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeScore {
    pub avg_logprob: f64,
    pub pred_avg_score: f64,
    pub pred_ppl: f64,
    pub tokens: usize,
}

pub fn decode_scores(hyps: &[Hypothesis]) -> Result<DecodeScore> {
    let tokens: usize = hyps.iter().map(|h| h.length).sum();
    if tokens == 0 {
        return Err(TranslatorError::NoTokens);
    }
    let avg = hyps.iter().map(|h| h.logprob_sum).sum::<f64>() / tokens as f64;
    Ok(DecodeScore {
        avg_logprob: avg,
        pred_avg_score: avg.abs(),
        pred_ppl: (-avg).exp(),
        tokens,
    })
}
