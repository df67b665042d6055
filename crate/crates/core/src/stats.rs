//! Exact order statistics.

/// Value at index `ceil(p/100 * n) - 1` of an ascending slice; no
/// interpolation. `p` is in percent.
pub fn percentile_sorted<T: Copy>(sorted: &[T], p: f64) -> T {
    assert!(!sorted.is_empty(), "percentile of an empty slice");
    assert!((0.0..=100.0).contains(&p), "percentile {p} outside [0, 100]");
    let n = sorted.len();
    let rank = (p / 100.0 * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}
