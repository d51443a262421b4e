//! Evaluation metrics: confusion-matrix scores, BLEU in its corpus and
//! sentence-averaged forms, and perplexity.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("confusion matrix has no samples")]
    EmptyMatrix,
    #[error("{refs} references but {hyps} hypotheses")]
    LengthMismatch { refs: usize, hyps: usize },
    #[error("no hypotheses to score")]
    EmptyHypothesisSet,
    #[error("no log-probabilities given")]
    Empty,
    #[error("class {class} outside 0..{k}")]
    ClassOutOfRange { class: usize, k: usize },
}

pub type Result<T> = std::result::Result<T, MetricsError>;

// ---------------------------------------------------------------------------
// Classification
// ---------------------------------------------------------------------------

/// Raw two-class outcome counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BinaryCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl BinaryCounts {
    pub fn accuracy(&self) -> Option<f64> {
        ratio(self.tp + self.tn, self.tp + self.tn + self.fp + self.fn_)
    }

    pub fn precision(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }
}

/// `K × K` counts; cell `(i, j)` counts samples of true class `i` predicted
/// as `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn from_pairs(k: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut cm = Self::new(k);
        for (t, p) in pairs {
            cm.record(t, p)?;
        }
        Ok(cm)
    }

    /// Two-class matrix with class 1 as the positive class.
    pub fn from_binary(c: BinaryCounts) -> Self {
        Self {
            k: 2,
            counts: vec![c.tn, c.fp, c.fn_, c.tp],
        }
    }

    pub fn record(&mut self, truth: usize, predicted: usize) -> Result<()> {
        for class in [truth, predicted] {
            if class >= self.k {
                return Err(MetricsError::ClassOutOfRange { class, k: self.k });
            }
        }
        self.counts[truth * self.k + predicted] += 1;
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.k + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts
            .chunks(self.k.max(1))
            .map(<[u64]>::to_vec)
            .collect()
    }

    /// One-vs-rest counts for `class`.
    pub fn class_counts(&self, class: usize) -> BinaryCounts {
        let tp = self.get(class, class);
        let row: u64 = (0..self.k).map(|j| self.get(class, j)).sum();
        let col: u64 = (0..self.k).map(|i| self.get(i, class)).sum();
        let fn_ = row - tp;
        let fp = col - tp;
        BinaryCounts {
            tp,
            fp,
            fn_,
            tn: self.total() - tp - fp - fn_,
        }
    }

    /// Element-wise sum; associative, so partial matrices can be merged in
    /// any grouping.
    pub fn merge(&self, other: &ConfusionMatrix) -> ConfusionMatrix {
        assert_eq!(self.k, other.k, "cannot merge matrices of different size");
        ConfusionMatrix {
            k: self.k,
            counts: self
                .counts
                .iter()
                .zip(&other.counts)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    fn check(&self) -> Result<()> {
        if self.total() == 0 {
            Err(MetricsError::EmptyMatrix)
        } else {
            Ok(())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Averaging {
    /// Unweighted mean over classes.
    Macro,
    /// Pooled counts over classes.
    Micro,
    /// Scores of a single positive class.
    Binary { positive: usize },
}

/// An averaged score together with the classes whose per-class ratio had a
/// zero denominator. Those classes contribute 0 to macro averages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Averaged {
    pub value: f64,
    pub degenerate_classes: Vec<usize>,
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    cm.check()?;
    let correct: u64 = (0..cm.k).map(|c| cm.get(c, c)).sum();
    Ok(correct as f64 / cm.total() as f64)
}

fn averaged(
    cm: &ConfusionMatrix,
    avg: Averaging,
    per_class: impl Fn(&BinaryCounts) -> Option<f64>,
    pooled: impl Fn(u64, u64, u64) -> (u64, u64),
) -> Result<Averaged> {
    cm.check()?;
    match avg {
        Averaging::Macro => {
            let mut degenerate = Vec::new();
            let sum: f64 = (0..cm.k)
                .map(|c| {
                    per_class(&cm.class_counts(c)).unwrap_or_else(|| {
                        degenerate.push(c);
                        0.0
                    })
                })
                .sum();
            Ok(Averaged {
                value: sum / cm.k as f64,
                degenerate_classes: degenerate,
            })
        }
        Averaging::Micro => {
            let (mut tp, mut fp, mut fn_) = (0, 0, 0);
            for c in 0..cm.k {
                let counts = cm.class_counts(c);
                tp += counts.tp;
                fp += counts.fp;
                fn_ += counts.fn_;
            }
            let (num, den) = pooled(tp, fp, fn_);
            Ok(Averaged {
                value: ratio(num, den).unwrap_or(0.0),
                degenerate_classes: Vec::new(),
            })
        }
        Averaging::Binary { positive } => {
            if positive >= cm.k {
                return Err(MetricsError::ClassOutOfRange {
                    class: positive,
                    k: cm.k,
                });
            }
            let v = per_class(&cm.class_counts(positive));
            Ok(Averaged {
                value: v.unwrap_or(0.0),
                degenerate_classes: if v.is_none() { vec![positive] } else { vec![] },
            })
        }
    }
}

/// `TP / (TP + FP)` under the chosen averaging.
pub fn precision(cm: &ConfusionMatrix, avg: Averaging) -> Result<Averaged> {
    averaged(cm, avg, BinaryCounts::precision, |tp, fp, _| (tp, tp + fp))
}

/// `TP / (TP + FN)` under the chosen averaging.
pub fn recall(cm: &ConfusionMatrix, avg: Averaging) -> Result<Averaged> {
    averaged(cm, avg, BinaryCounts::recall, |tp, _, fn_| (tp, tp + fn_))
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Macro F1: the mean of per-class F1 scores.
pub fn f1_macro(cm: &ConfusionMatrix) -> Result<f64> {
    cm.check()?;
    let sum: f64 = (0..cm.k)
        .map(|c| {
            let counts = cm.class_counts(c);
            f1(
                counts.precision().unwrap_or(0.0),
                counts.recall().unwrap_or(0.0),
            )
        })
        .sum();
    Ok(sum / cm.k as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub accuracy: f64,
    pub precision_macro: f64,
    pub precision_micro: f64,
    pub recall_macro: f64,
    pub recall_micro: f64,
    pub f1_macro: f64,
    pub degenerate_classes: Vec<usize>,
    pub confusion: Vec<Vec<u64>>,
}

impl ClassificationReport {
    pub fn from_matrix(cm: &ConfusionMatrix) -> Result<Self> {
        let pm = precision(cm, Averaging::Macro)?;
        let rm = recall(cm, Averaging::Macro)?;
        let mut degenerate = pm.degenerate_classes.clone();
        degenerate.extend(&rm.degenerate_classes);
        degenerate.sort_unstable();
        degenerate.dedup();
        Ok(Self {
            accuracy: accuracy(cm)?,
            precision_macro: pm.value,
            precision_micro: precision(cm, Averaging::Micro)?.value,
            recall_macro: rm.value,
            recall_micro: recall(cm, Averaging::Micro)?.value,
            f1_macro: f1_macro(cm)?,
            degenerate_classes: degenerate,
            confusion: cm.rows(),
        })
    }
}

// ---------------------------------------------------------------------------
// BLEU
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BleuMode {
    Corpus,
    SentenceAvg,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "epsilon")]
pub enum Smoothing {
    None,
    /// Zero match counts are replaced by epsilon.
    AddEpsilon(f64),
}

/// Clipped n-gram statistics, summable across sentences.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BleuStats {
    pub matches: Vec<u64>,
    pub totals: Vec<u64>,
    pub hyp_len: u64,
    pub ref_len: u64,
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], u64> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

impl BleuStats {
    pub fn from_pair<T: Eq + Hash>(reference: &[T], hypothesis: &[T], max_n: usize) -> Self {
        let mut matches = Vec::with_capacity(max_n);
        let mut totals = Vec::with_capacity(max_n);
        for n in 1..=max_n {
            let ref_counts = ngram_counts(reference, n);
            let hyp_counts = ngram_counts(hypothesis, n);
            matches.push(
                hyp_counts
                    .iter()
                    .map(|(gram, &c)| c.min(ref_counts.get(gram).copied().unwrap_or(0)))
                    .sum(),
            );
            totals.push(hypothesis.len().saturating_sub(n - 1) as u64);
        }
        Self {
            matches,
            totals,
            hyp_len: hypothesis.len() as u64,
            ref_len: reference.len() as u64,
        }
    }

    pub fn merge(&self, other: &BleuStats) -> BleuStats {
        let add = |a: &[u64], b: &[u64]| -> Vec<u64> {
            let n = a.len().max(b.len());
            (0..n)
                .map(|i| a.get(i).copied().unwrap_or(0) + b.get(i).copied().unwrap_or(0))
                .collect()
        };
        BleuStats {
            matches: add(&self.matches, &other.matches),
            totals: add(&self.totals, &other.totals),
            hyp_len: self.hyp_len + other.hyp_len,
            ref_len: self.ref_len + other.ref_len,
        }
    }

    pub fn brevity_penalty(&self) -> f64 {
        if self.hyp_len > self.ref_len {
            1.0
        } else if self.hyp_len == 0 {
            0.0
        } else {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        }
    }

    /// Modified precisions. Without smoothing an empty denominator counts as
    /// precision 0; with add-epsilon, zero numerators become epsilon over
    /// `max(1, total)`.
    pub fn precisions(&self, smoothing: Smoothing) -> Vec<f64> {
        self.matches
            .iter()
            .zip(&self.totals)
            .map(|(&m, &t)| match smoothing {
                Smoothing::None => {
                    if t == 0 {
                        0.0
                    } else {
                        m as f64 / t as f64
                    }
                }
                Smoothing::AddEpsilon(eps) => {
                    let num = if m == 0 { eps } else { m as f64 };
                    num / t.max(1) as f64
                }
            })
            .collect()
    }

    pub fn score(&self, smoothing: Smoothing) -> f64 {
        let ps = self.precisions(smoothing);
        if ps.is_empty() || ps.iter().any(|&p| p <= 0.0) {
            return 0.0;
        }
        let log_mean = ps.iter().map(|p| p.ln()).sum::<f64>() / ps.len() as f64;
        self.brevity_penalty() * log_mean.exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuReport {
    pub mode: BleuMode,
    pub smoothing: Smoothing,
    /// Modified n-gram precisions for n = 1..=max_n. In sentence mode these
    /// are per-sentence means.
    pub precisions: Vec<f64>,
    /// Brevity penalty (a per-sentence mean in sentence mode).
    pub bp: f64,
    pub hyp_len: u64,
    pub ref_len: u64,
    /// In `[0, 1]`.
    pub score: f64,
}

impl BleuReport {
    pub fn score_x100(&self) -> f64 {
        self.score * 100.0
    }
}

fn check_aligned<T>(refs: &[Vec<T>], hyps: &[Vec<T>]) -> Result<()> {
    if refs.len() != hyps.len() {
        return Err(MetricsError::LengthMismatch {
            refs: refs.len(),
            hyps: hyps.len(),
        });
    }
    if hyps.is_empty() {
        return Err(MetricsError::EmptyHypothesisSet);
    }
    Ok(())
}

/// Corpus BLEU: clipped n-gram counts and lengths pooled over all sentences,
/// single reference per hypothesis, no smoothing.
pub fn bleu_corpus<T: Eq + Hash>(
    refs: &[Vec<T>],
    hyps: &[Vec<T>],
    max_n: usize,
) -> Result<BleuReport> {
    check_aligned(refs, hyps)?;
    let stats = refs
        .iter()
        .zip(hyps)
        .map(|(r, h)| BleuStats::from_pair(r, h, max_n))
        .fold(BleuStats::default(), |acc, s| acc.merge(&s));
    Ok(BleuReport {
        mode: BleuMode::Corpus,
        smoothing: Smoothing::None,
        precisions: stats.precisions(Smoothing::None),
        bp: stats.brevity_penalty(),
        hyp_len: stats.hyp_len,
        ref_len: stats.ref_len,
        score: stats.score(Smoothing::None),
    })
}

/// Mean of per-sentence BLEU scores, each computed with add-epsilon
/// smoothing (4-grams).
pub fn bleu_sentence_avg<T: Eq + Hash>(
    refs: &[Vec<T>],
    hyps: &[Vec<T>],
    epsilon: f64,
) -> Result<BleuReport> {
    const MAX_N: usize = 4;
    check_aligned(refs, hyps)?;
    let smoothing = Smoothing::AddEpsilon(epsilon);
    let n = hyps.len() as f64;
    let mut precisions = vec![0.0; MAX_N];
    let (mut bp, mut score) = (0.0, 0.0);
    let (mut hyp_len, mut ref_len) = (0, 0);
    for (r, h) in refs.iter().zip(hyps) {
        let stats = BleuStats::from_pair(r, h, MAX_N);
        for (acc, p) in precisions.iter_mut().zip(stats.precisions(smoothing)) {
            *acc += p / n;
        }
        bp += stats.brevity_penalty() / n;
        score += stats.score(smoothing) / n;
        hyp_len += stats.hyp_len;
        ref_len += stats.ref_len;
    }
    Ok(BleuReport {
        mode: BleuMode::SentenceAvg,
        smoothing,
        precisions,
        bp,
        hyp_len,
        ref_len,
        score,
    })
}

/// Tokenization applied before BLEU in the normalized variant: lowercase,
/// split on whitespace, and split ASCII punctuation (apostrophes excepted)
/// into separate tokens.
pub fn bleu_tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for word in text.split_whitespace() {
        let mut current = String::new();
        for c in word.chars().flat_map(char::to_lowercase) {
            if c.is_ascii_punctuation() && c != '\'' {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
                tokens.push(c.to_string());
            } else {
                current.push(c);
            }
        }
        if !current.is_empty() {
            tokens.push(current);
        }
    }
    tokens
}

/// Plain whitespace tokenization, no normalization.
pub fn whitespace_tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}

// ---------------------------------------------------------------------------
// Perplexity
// ---------------------------------------------------------------------------

/// `exp(-mean(logprobs))` over natural-log token probabilities.
pub fn perplexity(logprobs: &[f64]) -> Result<f64> {
    if logprobs.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mean = logprobs.iter().sum::<f64>() / logprobs.len() as f64;
    Ok((-mean).exp())
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuSummary {
    pub mode: BleuMode,
    pub smoothing: Smoothing,
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
    pub p4: f64,
    pub bp: f64,
    pub score_x100: f64,
}

impl From<&BleuReport> for BleuSummary {
    fn from(r: &BleuReport) -> Self {
        let p = |i: usize| r.precisions.get(i).copied().unwrap_or(0.0);
        Self {
            mode: r.mode,
            smoothing: r.smoothing,
            p1: p(0),
            p2: p(1),
            p3: p(2),
            p4: p(3),
            bp: r.bp,
            score_x100: r.score_x100(),
        }
    }
}

/// Evaluation report; absent sections are omitted from the JSON.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub precision_macro: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub precision_micro: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recall_macro: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recall_micro: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f1_macro: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub degenerate_classes: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bleu: Option<BleuSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ppl: Option<f64>,
}

impl MetricsReport {
    pub fn with_classification(mut self, c: &ClassificationReport) -> Self {
        self.accuracy = Some(c.accuracy);
        self.precision_macro = Some(c.precision_macro);
        self.precision_micro = Some(c.precision_micro);
        self.recall_macro = Some(c.recall_macro);
        self.recall_micro = Some(c.recall_micro);
        self.f1_macro = Some(c.f1_macro);
        self.degenerate_classes = Some(c.degenerate_classes.clone());
        self
    }

    pub fn with_bleu(mut self, b: &BleuReport) -> Self {
        self.bleu = Some(b.into());
        self
    }

    pub fn with_ppl(mut self, ppl: f64) -> Self {
        self.ppl = Some(ppl);
        self
    }
}
