//! Attribution mass, coverage and top-k selection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record::{SaliencyRecord, TokenSelection};

/// How tokens are ranked by [`top_k_indices`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    /// Rank by signed score; negative tokens fill up the tail when fewer
    /// than `k` tokens are positive.
    #[default]
    Signed,
    /// Rank by signed score, keeping only tokens with a positive score.
    PositiveOnly,
    /// Rank by absolute score.
    Absolute,
}

/// L1 mass of the saliency map, `Σ |s_i|`.
pub fn attribution_mass(record: &SaliencyRecord) -> f64 {
    record.scores().iter().map(|s| s.abs()).sum()
}

fn positive_mass(record: &SaliencyRecord) -> f64 {
    record.scores().iter().filter(|&&s| s > 0.0).sum()
}

/// Share of the absolute attribution mass carried by `sel`.
pub fn coverage(record: &SaliencyRecord, sel: &TokenSelection) -> Result<f64> {
    sel.check_bounds(record)?;
    let total = attribution_mass(record);
    if total == 0.0 {
        return Err(Error::ZeroMass);
    }
    let covered: f64 = sel.iter().map(|i| record.scores()[i].abs()).sum();
    Ok((covered / total).min(1.0))
}

/// Share of the positive attribution mass carried by `sel`. Tokens with a
/// non-positive score contribute nothing.
pub fn coverage_positive(record: &SaliencyRecord, sel: &TokenSelection) -> Result<f64> {
    sel.check_bounds(record)?;
    let total = positive_mass(record);
    if total == 0.0 {
        return Err(Error::ZeroMass);
    }
    let covered: f64 = sel
        .iter()
        .map(|i| record.scores()[i])
        .filter(|&s| s > 0.0)
        .sum();
    Ok((covered / total).min(1.0))
}

/// [`coverage_positive`], reading a map without positive mass as covering
/// nothing.
pub fn coverage_positive_or_zero(record: &SaliencyRecord, sel: &TokenSelection) -> Result<f64> {
    match coverage_positive(record, sel) {
        Err(Error::ZeroMass) => Ok(0.0),
        other => other,
    }
}

/// Positions of the `min(k, n)` highest-ranked tokens, ties resolved towards
/// the lower index.
pub fn top_k_indices(record: &SaliencyRecord, k: usize, polarity: Polarity) -> TokenSelection {
    let scores = record.scores();
    let key = |i: usize| match polarity {
        Polarity::Absolute => scores[i].abs(),
        Polarity::Signed | Polarity::PositiveOnly => scores[i],
    };
    let mut order: Vec<usize> = (0..record.len())
        .filter(|&i| polarity != Polarity::PositiveOnly || scores[i] > 0.0)
        .collect();
    order.sort_by(|&a, &b| key(b).total_cmp(&key(a)).then(a.cmp(&b)));
    order.truncate(k);
    order.into_iter().collect()
}
