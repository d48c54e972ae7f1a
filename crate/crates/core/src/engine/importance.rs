//! Predictor-importance rankings: selection counts for stepwise engines and
//! split improvements for tree engines.

use std::collections::BTreeMap;

/// Descending by score, ties alphabetical.
pub fn rank<V: Copy + PartialOrd>(scores: &BTreeMap<String, V>) -> Vec<(String, V)> {
    let mut v: Vec<(String, V)> = scores.iter().map(|(k, s)| (k.clone(), *s)).collect();
    v.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then_with(|| a.0.cmp(&b.0)));
    v
}

/// Number of selections of each predictor over all fits. Every name in
/// `universe` is listed, unchosen ones with 0.
pub fn selection_counts<'a, I, F>(fits: I, universe: &[String]) -> Vec<(String, usize)>
where
    I: IntoIterator<Item = F>,
    F: IntoIterator<Item = &'a str>,
{
    let mut counts: BTreeMap<String, usize> = universe.iter().map(|n| (n.clone(), 0)).collect();
    for p in fits.into_iter().flatten() {
        *counts.entry(p.to_string()).or_insert(0) += 1;
    }
    rank(&counts)
}

/// Mean over fits of per-fit improvement totals. With `normalize`, each fit
/// is first scaled to sum 1 so fits in different criterion units can be
/// pooled.
pub fn improvement_ranking<'a>(
    fits: impl IntoIterator<Item = &'a BTreeMap<String, f64>>,
    universe: &[String],
    normalize: bool,
) -> Vec<(String, f64)> {
    let mut acc: BTreeMap<String, f64> = universe.iter().map(|n| (n.clone(), 0.0)).collect();
    let mut n = 0usize;
    for fit in fits {
        n += 1;
        let total: f64 = fit.values().sum();
        let scale = if normalize && total > 0.0 { 1.0 / total } else { 1.0 };
        for (k, v) in fit {
            *acc.entry(k.clone()).or_insert(0.0) += v * scale;
        }
    }
    if n > 0 {
        acc.values_mut().for_each(|v| *v /= n as f64);
    }
    rank(&acc)
}
