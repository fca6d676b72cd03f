//! Order-stable summary statistics.
//!
//! Means are taken around the largest value after sorting, so the result
//! depends only on the multiset of inputs and is exact for constant inputs.
//! Threshold comparisons downstream rely on both properties.

pub fn stable_mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let pivot = sorted[0];
    let offset: f64 = sorted.iter().map(|v| v - pivot).sum();
    Some(pivot + offset / sorted.len() as f64)
}

/// Population standard deviation.
pub fn population_std(values: &[f64]) -> Option<f64> {
    let mean = stable_mean(values)?;
    let mut sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    sq.sort_by(|a, b| b.total_cmp(a));
    let var: f64 = sq.iter().sum::<f64>() / values.len() as f64;
    Some(var.sqrt())
}

/// Quantile with linear interpolation between order statistics
/// (`h = (m - 1) q`).
pub fn quantile_linear(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() || !(0.0..=1.0).contains(&q) {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    let frac = h - lo as f64;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
}
