use std::collections::BTreeMap;

use super::{GlyphError, Result};

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

/// Majority label among the `k` nearest bank vectors (Euclidean).
///
/// Ties in vote count go to the label with the smaller mean distance, then
/// to the smaller label. Equal distances at the k-th place are ordered by
/// bank position.
pub fn knn_predict(query: &[f32], bank: &[(Vec<f32>, usize)], k: usize) -> Result<usize> {
    if bank.is_empty() {
        return Err(GlyphError::EmptyBank);
    }
    if k == 0 || k > bank.len() {
        return Err(GlyphError::InvalidConfig(format!(
            "k = {k} must be in 1..={}",
            bank.len()
        )));
    }
    if let Some((v, _)) = bank.iter().find(|(v, _)| v.len() != query.len()) {
        return Err(GlyphError::InvalidConfig(format!(
            "bank vector of length {} against query of length {}",
            v.len(),
            query.len()
        )));
    }
    let mut dists: Vec<(f64, usize)> = bank
        .iter()
        .enumerate()
        .map(|(i, (v, _))| (sq_dist(query, v), i))
        .collect();
    dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut votes: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
    for &(d, i) in &dists[..k] {
        let e = votes.entry(bank[i].1).or_insert((0, 0.0));
        e.0 += 1;
        e.1 += d.sqrt();
    }
    let best = votes
        .into_iter()
        .map(|(label, (n, total))| (label, n, total / n as f64))
        .min_by(|a, b| b.1.cmp(&a.1).then(a.2.total_cmp(&b.2)).then(a.0.cmp(&b.0)))
        .expect("k ≥ 1");
    Ok(best.0)
}
