//! Ranking and regression metrics. Percentages are in `[0, 100]`.

/// Share of 1-based `ranks` that are `<= k`, times 100.
pub fn hits_at(ranks: &[usize], k: usize) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    100.0 * ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64
}

/// Mean reciprocal rank truncated at `k`, times 100.
pub fn map_at(ranks: &[usize], k: usize) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    100.0 * ranks.iter().map(|&r| if r <= k { 1.0 / r as f64 } else { 0.0 }).sum::<f64>() / ranks.len() as f64
}

/// Root mean squared difference over `(truth, prediction)` pairs.
pub fn rmse(pairs: impl IntoIterator<Item = (f64, f64)>) -> Option<f64> {
    let (n, sq) = pairs.into_iter().fold((0usize, 0.0), |(n, s), (a, b)| (n + 1, s + (a - b) * (a - b)));
    (n > 0).then(|| (sq / n as f64).sqrt())
}
