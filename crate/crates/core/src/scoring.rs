//! Saliency thresholds for raw candidates.
//!
//! Every record gets a baseline β, the mean of its top-`⌈fraction · n⌉`
//! signed scores. In weighted-average mode a candidate is accepted when its
//! per-token mean strictly exceeds β. In quantile mode it must strictly
//! exceed both β and `σ* = mean + multiplier · std` of the record's scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record::SaliencyRecord;
use crate::search::RawCandidate;
use crate::stats::{population_std, stable_mean};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringMetric {
    #[default]
    WeightedAverage,
    Quantile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringConfig {
    pub metric: ScoringMetric,
    /// Fraction of the most salient tokens averaged into β.
    pub beta_fraction: f64,
    /// Multiplier on the standard deviation in quantile mode.
    pub sigma_multiplier: f64,
    /// Fixed β used instead of the per-record average.
    pub beta_threshold: Option<f64>,
    pub notes: String,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig {
            metric: ScoringMetric::WeightedAverage,
            beta_fraction: 0.4,
            sigma_multiplier: 3.0,
            beta_threshold: None,
            notes: String::new(),
        }
    }
}

impl ScoringConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta_fraction > 0.0 && self.beta_fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "beta_fraction must lie in (0, 1], got {}",
                self.beta_fraction
            )));
        }
        if !(self.sigma_multiplier.is_finite() && self.sigma_multiplier >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "sigma_multiplier must be finite and non-negative, got {}",
                self.sigma_multiplier
            )));
        }
        if let Some(t) = self.beta_threshold {
            if !t.is_finite() {
                return Err(Error::InvalidConfig("beta_threshold must be finite".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub candidate: RawCandidate,
    pub score: f64,
    pub accepted: bool,
}

/// Mean of the top `⌈fraction · n⌉` scores (at least one), signed and
/// descending.
pub fn baseline_beta(record: &SaliencyRecord, beta_fraction: f64) -> f64 {
    let n = record.len();
    // Guard against products like 0.1 * 30 landing a hair above an integer.
    let m = ((beta_fraction * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    let mut sorted = record.scores().to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    stable_mean(&sorted[..m]).expect("records are non-empty")
}

/// Sum of the candidate's values over its number of selected tokens.
pub fn score_weighted_average(cand: &RawCandidate) -> Result<f64> {
    stable_mean(&cand.values).ok_or(Error::EmptyCandidate)
}

/// `mean + multiplier · std` over all scores (population deviation).
pub fn score_quantile_threshold(record: &SaliencyRecord, sigma_multiplier: f64) -> Result<f64> {
    let scores = record.scores();
    if scores.len() < 2 {
        return Err(Error::DegenerateSample { n: scores.len() });
    }
    let mean = stable_mean(scores).expect("non-empty");
    let sd = population_std(scores).expect("non-empty");
    Ok(mean + sigma_multiplier * sd)
}

/// Per-record thresholds, computed once and reused for every candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub metric: ScoringMetric,
    pub beta: f64,
    pub sigma: Option<f64>,
}

impl Thresholds {
    pub fn for_record(record: &SaliencyRecord, cfg: &ScoringConfig) -> Result<Self> {
        cfg.validate()?;
        let beta = cfg
            .beta_threshold
            .unwrap_or_else(|| baseline_beta(record, cfg.beta_fraction));
        let sigma = match cfg.metric {
            ScoringMetric::WeightedAverage => None,
            ScoringMetric::Quantile => Some(score_quantile_threshold(record, cfg.sigma_multiplier)?),
        };
        Ok(Thresholds {
            metric: cfg.metric,
            beta,
            sigma,
        })
    }

    pub fn score(&self, cand: RawCandidate) -> Result<ScoredCandidate> {
        let score = score_weighted_average(&cand)?;
        let accepted = score > self.beta && self.sigma.is_none_or(|sigma| score > sigma);
        Ok(ScoredCandidate {
            candidate: cand,
            score,
            accepted,
        })
    }
}

/// Scores one candidate against the record's thresholds.
pub fn accept(cand: &RawCandidate, record: &SaliencyRecord, cfg: &ScoringConfig) -> Result<ScoredCandidate> {
    Thresholds::for_record(record, cfg)?.score(cand.clone())
}
