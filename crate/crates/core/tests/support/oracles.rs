//! Brute-force reference implementations shared by property and acceptance
//! tests. Deliberately slow and free of hashing.

#![allow(dead_code)]

/// Every n-gram of `tokens`, in order, as owned vectors.
fn ngrams(tokens: &[String], n: usize) -> Vec<Vec<String>> {
    if tokens.len() < n {
        return Vec::new();
    }
    (0..=tokens.len() - n)
        .map(|i| tokens[i..i + n].to_vec())
        .collect()
}

fn count(grams: &[Vec<String>], g: &[String]) -> u64 {
    grams.iter().filter(|x| x.as_slice() == g).count() as u64
}

/// Clipped matches and hypothesis n-gram total for one sentence pair,
/// by exhaustive pairwise comparison.
pub fn clipped(reference: &[String], hypothesis: &[String], n: usize) -> (u64, u64) {
    let hyp = ngrams(hypothesis, n);
    let rf = ngrams(reference, n);
    let mut matched = 0;
    let mut seen: Vec<Vec<String>> = Vec::new();
    for g in &hyp {
        if seen.contains(g) {
            continue;
        }
        seen.push(g.clone());
        matched += count(&hyp, g).min(count(&rf, g));
    }
    (matched, hyp.len() as u64)
}

/// Corpus BLEU-4, pooled and unsmoothed. Returns `(score, p_n, bp)`.
pub fn bleu_corpus(refs: &[Vec<String>], hyps: &[Vec<String>]) -> (f64, Vec<f64>, f64) {
    let mut m = [0u64; 4];
    let mut t = [0u64; 4];
    let (mut c, mut r) = (0u64, 0u64);
    for (rf, h) in refs.iter().zip(hyps) {
        for n in 1..=4 {
            let (a, b) = clipped(rf, h, n);
            m[n - 1] += a;
            t[n - 1] += b;
        }
        c += h.len() as u64;
        r += rf.len() as u64;
    }
    let p: Vec<f64> = (0..4)
        .map(|i| {
            if t[i] == 0 {
                0.0
            } else {
                m[i] as f64 / t[i] as f64
            }
        })
        .collect();
    let bp = if c > r {
        1.0
    } else if c == 0 {
        0.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    let score = if p.iter().any(|&x| x == 0.0) {
        0.0
    } else {
        bp * (p.iter().map(|x| x.ln()).sum::<f64>() / 4.0).exp()
    };
    (score, p, bp)
}

/// Mean sentence BLEU-4 with zero numerators replaced by `eps`.
pub fn bleu_sentence_avg(refs: &[Vec<String>], hyps: &[Vec<String>], eps: f64) -> f64 {
    let mut total = 0.0;
    for (rf, h) in refs.iter().zip(hyps) {
        let mut log_sum = 0.0;
        for n in 1..=4 {
            let (m, t) = clipped(rf, h, n);
            let num = if m == 0 { eps } else { m as f64 };
            log_sum += (num / t.max(1) as f64).ln();
        }
        let (c, r) = (h.len() as f64, rf.len() as f64);
        let bp = if c > r {
            1.0
        } else if c == 0.0 {
            0.0
        } else {
            (1.0 - r / c).exp()
        };
        total += bp * (log_sum / 4.0).exp();
    }
    total / hyps.len() as f64
}

/// Otsu threshold by scanning every threshold over every pixel, comparing
/// between-class variances as exact rationals. Lowest maximizer wins; 0 when
/// no threshold separates two non-empty classes.
pub fn otsu(pixels: &[u8]) -> u16 {
    // Between-class variance is proportional to (S_b·n_a − S_a·n_b)² / (n_b·n_a).
    let mut best: Option<(u128, u128)> = None;
    let mut best_t = 0u16;
    for t in 0..=256u16 {
        let (mut nb, mut na, mut sb, mut sa) = (0u128, 0u128, 0u128, 0u128);
        for &v in pixels {
            if (v as u16) < t {
                nb += 1;
                sb += v as u128;
            } else {
                na += 1;
                sa += v as u128;
            }
        }
        if nb == 0 || na == 0 {
            continue;
        }
        let d = (sb * na).abs_diff(sa * nb);
        let (num, den) = (d * d, nb * na);
        let better = match best {
            None => num > 0,
            Some((bn, bd)) => num * bd > bn * den,
        };
        if better {
            best = Some((num, den));
            best_t = t;
        }
    }
    best_t
}
