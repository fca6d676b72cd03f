//! Summarized explanations: pool search results with the top-k tokens,
//! merge neighbouring positions into spans, and keep the spans whose positive
//! coverage reaches the configured quantile.
//!
//! Also hosts [`subset_filter`], the corpus-level instance selection used to
//! assemble evaluation sets.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::coverage::{attribution_mass, coverage_positive, coverage_positive_or_zero, top_k_indices, Polarity};
use crate::error::{Error, Result};
use crate::record::{SaliencyRecord, TokenSelection};
use crate::scoring::{ScoredCandidate, ScoringConfig, ScoringMetric, Thresholds};
use crate::search::{CandidateSource, FilterBank, RawCandidate};
use crate::stats::quantile_linear;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedSpan {
    pub indices: TokenSelection,
    pub coverage_positive: f64,
    pub origin: BTreeSet<CandidateSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectConfig {
    /// Candidates kept per source (and number of top-k singletons).
    pub k: usize,
    /// Coverage quantile spans must reach.
    pub q: f64,
    pub max_final: Option<usize>,
}

impl Default for SelectConfig {
    fn default() -> Self {
        SelectConfig {
            k: 5,
            q: 0.75,
            max_final: None,
        }
    }
}

impl SelectConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be positive".into()));
        }
        if !(self.q > 0.0 && self.q < 1.0) {
            return Err(Error::InvalidConfig(format!("q must lie in (0, 1), got {}", self.q)));
        }
        if self.max_final == Some(0) {
            return Err(Error::InvalidConfig("max_final must be positive".into()));
        }
        Ok(())
    }
}

/// Best `k` accepted candidates with distinct index sets, highest score first.
fn top_accepted(scored: &[ScoredCandidate], k: usize) -> Vec<(&RawCandidate, f64)> {
    let mut accepted: Vec<&ScoredCandidate> = scored.iter().filter(|s| s.accepted).collect();
    // Stable: equal scores keep enumeration order.
    accepted.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut seen = BTreeSet::new();
    accepted
        .into_iter()
        .filter(|s| seen.insert(&s.candidate.indices))
        .take(k)
        .map(|s| (&s.candidate, s.score))
        .collect()
}

/// Union of the top-`k` accepted convolution and span candidates and the
/// `k` highest-scoring single tokens. Identical index sets are merged,
/// keeping the entry with the higher score.
pub fn pool_candidates(
    record: &SaliencyRecord,
    conv: &[ScoredCandidate],
    span: &[ScoredCandidate],
    k: usize,
) -> Vec<RawCandidate> {
    let singletons: Vec<(RawCandidate, f64)> = top_k_indices(record, k, Polarity::Signed)
        .iter()
        .map(|i| (RawCandidate::singleton(record, i, CandidateSource::TopK), record.scores()[i]))
        .collect();

    let mut pool: Vec<(RawCandidate, f64)> = Vec::new();
    let mut slot: HashMap<TokenSelection, usize> = HashMap::new();
    let entries = top_accepted(conv, k)
        .into_iter()
        .chain(top_accepted(span, k))
        .map(|(c, s)| (c.clone(), s))
        .chain(singletons);
    for (cand, score) in entries {
        match slot.get(&cand.indices) {
            Some(&at) => {
                if score > pool[at].1 {
                    pool[at] = (cand, score);
                }
            }
            None => {
                slot.insert(cand.indices.clone(), pool.len());
                pool.push((cand, score));
            }
        }
    }
    pool.into_iter().map(|(c, _)| c).collect()
}

/// Unions all pooled positions and splits them into maximal consecutive runs.
pub fn merge_adjacent(pool: &[RawCandidate], record: &SaliencyRecord) -> Result<Vec<MergedSpan>> {
    let union: TokenSelection = pool.iter().flat_map(|c| c.indices.iter()).collect();
    union.check_bounds(record)?;
    union
        .runs()
        .into_iter()
        .map(|run| {
            let origin = pool
                .iter()
                .filter(|c| c.indices.iter().any(|i| run.contains(i)))
                .map(|c| c.source)
                .collect();
            Ok(MergedSpan {
                coverage_positive: coverage_positive_or_zero(record, &run)?,
                indices: run,
                origin,
            })
        })
        .collect()
}

fn by_coverage_desc(a: &MergedSpan, b: &MergedSpan) -> std::cmp::Ordering {
    b.coverage_positive
        .total_cmp(&a.coverage_positive)
        .then_with(|| a.indices.cmp(&b.indices))
}

/// Keeps the spans whose coverage reaches the `q`-quantile of all span
/// coverages, best first. Falls back to the single best span.
pub fn quantile_select(spans: &[MergedSpan], q: f64) -> Result<Vec<MergedSpan>> {
    if spans.is_empty() {
        return Err(Error::NoSpans);
    }
    let coverages: Vec<f64> = spans.iter().map(|s| s.coverage_positive).collect();
    let threshold = quantile_linear(&coverages, q)
        .ok_or_else(|| Error::InvalidConfig(format!("q must lie in [0, 1], got {q}")))?;
    let mut kept: Vec<MergedSpan> = spans
        .iter()
        .filter(|s| s.coverage_positive >= threshold)
        .cloned()
        .collect();
    if kept.is_empty() {
        log::debug!("no span reached the {q}-quantile of coverage; keeping the best one");
        kept.push(spans.iter().min_by(|a, b| by_coverage_desc(a, b)).cloned().expect("non-empty"));
    }
    kept.sort_by(by_coverage_desc);
    Ok(kept)
}

/// Runs search, scoring, pooling, merging and quantile selection for one
/// record at a time. Cheap to share across threads.
#[derive(Debug, Clone)]
pub struct Summarizer {
    bank: FilterBank,
    select: SelectConfig,
    scoring: ScoringConfig,
}

impl Summarizer {
    pub fn new(select: SelectConfig, scoring: ScoringConfig, c_conv: usize, c_span: usize) -> Result<Self> {
        select.validate()?;
        scoring.validate()?;
        Ok(Summarizer {
            bank: FilterBank::new(c_conv, c_span)?,
            select,
            scoring,
        })
    }

    pub fn bank(&self) -> &FilterBank {
        &self.bank
    }

    pub fn select_config(&self) -> &SelectConfig {
        &self.select
    }

    pub fn scoring_config(&self) -> &ScoringConfig {
        &self.scoring
    }

    /// Scored convolution and span candidates. Quantile scoring needs at
    /// least two tokens; shorter records yield no search candidates.
    pub fn scored_candidates(
        &self,
        record: &SaliencyRecord,
    ) -> Result<(Vec<ScoredCandidate>, Vec<ScoredCandidate>)> {
        let thresholds = match Thresholds::for_record(record, &self.scoring) {
            Err(Error::DegenerateSample { .. }) if self.scoring.metric == ScoringMetric::Quantile => {
                return Ok((Vec::new(), Vec::new()))
            }
            other => other?,
        };
        let score_all = |cands: Vec<RawCandidate>| -> Result<Vec<ScoredCandidate>> {
            cands.into_iter().map(|c| thresholds.score(c)).collect()
        };
        Ok((
            score_all(self.bank.convolution_candidates(record)?)?,
            score_all(self.bank.span_candidates(record)?)?,
        ))
    }

    pub fn summarize(&self, record: &SaliencyRecord) -> Result<Vec<MergedSpan>> {
        if attribution_mass(record) == 0.0 {
            return Err(Error::ZeroMass);
        }
        let (conv, span) = self.scored_candidates(record)?;
        let pool = pool_candidates(record, &conv, &span, self.select.k);
        let merged = merge_adjacent(&pool, record)?;
        let mut kept = quantile_select(&merged, self.select.q)?;
        if let Some(max) = self.select.max_final {
            kept.truncate(max);
        }
        Ok(kept)
    }
}

/// One-shot form of [`Summarizer::summarize`].
pub fn summarize(
    record: &SaliencyRecord,
    cfg: &SelectConfig,
    scoring: &ScoringConfig,
    c_conv: usize,
    c_span: usize,
) -> Result<Vec<MergedSpan>> {
    Summarizer::new(cfg.clone(), scoring.clone(), c_conv, c_span)?.summarize(record)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Balance {
    /// Downsample to the same number of records per true label.
    pub labels: bool,
    /// Required share of misclassified records.
    pub error_rate: Option<f64>,
    /// Exact number of records to keep per label (with `labels`) or in
    /// total (without).
    pub target: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SubsetHeuristics {
    pub min_cov_pos_topk: f64,
    pub max_tokens: usize,
    pub k: usize,
    pub balance: Balance,
}

impl Default for SubsetHeuristics {
    fn default() -> Self {
        SubsetHeuristics {
            min_cov_pos_topk: 0.15,
            max_tokens: 80,
            k: 5,
            balance: Balance::default(),
        }
    }
}

/// Sizes `(misclassified, correct)` for a group of `size` records.
fn split_for(size: usize, error_rate: Option<f64>) -> (usize, usize) {
    match error_rate {
        Some(rate) => {
            let wrong = (size as f64 * rate).round() as usize;
            (wrong.min(size), size - wrong.min(size))
        }
        None => (0, size),
    }
}

/// Picks `size` records from `group` (already ordered by id).
fn pick<'a>(group: &[&'a SaliencyRecord], size: usize, error_rate: Option<f64>) -> Option<Vec<&'a SaliencyRecord>> {
    if error_rate.is_none() {
        return (group.len() >= size).then(|| group[..size].to_vec());
    }
    let (wrong, right) = split_for(size, error_rate);
    let wrongs: Vec<_> = group.iter().filter(|r| r.is_misclassified()).take(wrong).copied().collect();
    let rights: Vec<_> = group.iter().filter(|r| !r.is_misclassified()).take(right).copied().collect();
    (wrongs.len() == wrong && rights.len() == right).then(|| wrongs.into_iter().chain(rights).collect())
}

fn largest_feasible(groups: &[Vec<&SaliencyRecord>], error_rate: Option<f64>) -> usize {
    let upper = groups.iter().map(Vec::len).min().unwrap_or(0);
    (0..=upper)
        .rev()
        .find(|&size| groups.iter().all(|g| pick(g, size, error_rate).is_some()))
        .unwrap_or(0)
}

/// Filters a corpus down to instances suited for evaluation.
///
/// Keeps records with at most `max_tokens` tokens whose top-`k` positive
/// coverage reaches `min_cov_pos_topk`, then optionally balances true labels
/// and the share of misclassified instances. Balancing picks records in
/// ascending id order; the output keeps input order.
pub fn subset_filter(records: &[SaliencyRecord], heuristics: &SubsetHeuristics) -> Result<Vec<SaliencyRecord>> {
    if let Some(rate) = heuristics.balance.error_rate {
        if !(0.0..=1.0).contains(&rate) {
            return Err(Error::InvalidConfig(format!("error_rate must lie in [0, 1], got {rate}")));
        }
    }
    let k = heuristics.k.max(1);
    let mut kept: Vec<&SaliencyRecord> = Vec::new();
    for record in records {
        if record.len() > heuristics.max_tokens {
            continue;
        }
        let top = top_k_indices(record, k, Polarity::PositiveOnly);
        match coverage_positive(record, &top) {
            Ok(c) if c >= heuristics.min_cov_pos_topk => kept.push(record),
            Ok(_) | Err(Error::ZeroMass) => {}
            Err(e) => return Err(e),
        }
    }

    let balance = &heuristics.balance;
    if !balance.labels && balance.error_rate.is_none() && balance.target.is_none() {
        return Ok(kept.into_iter().cloned().collect());
    }

    let mut by_id = kept.clone();
    by_id.sort_by(|a, b| a.id().cmp(b.id()));
    let groups: Vec<Vec<&SaliencyRecord>> = if balance.labels {
        let mut map: BTreeMap<&str, Vec<&SaliencyRecord>> = BTreeMap::new();
        for r in &by_id {
            map.entry(r.true_label()).or_default().push(r);
        }
        map.into_values().collect()
    } else {
        vec![by_id]
    };
    if groups.is_empty() {
        return Err(Error::InsufficientRecords("no record passes the coverage and length filters".into()));
    }

    let size = match balance.target {
        Some(t) => t,
        None => largest_feasible(&groups, balance.error_rate),
    };
    let counts = |g: &Vec<&SaliencyRecord>| {
        let wrong = g.iter().filter(|r| r.is_misclassified()).count();
        format!("{} ({} misclassified)", g.len(), wrong)
    };
    if size == 0 && balance.target.is_none() {
        let have: Vec<String> = groups.iter().map(counts).collect();
        return Err(Error::InsufficientRecords(format!(
            "no non-empty balanced subset exists; available per group: {}",
            have.join(", ")
        )));
    }
    let mut chosen: BTreeSet<*const SaliencyRecord> = BTreeSet::new();
    for g in &groups {
        let picked = pick(g, size, balance.error_rate).ok_or_else(|| {
            let (wrong, right) = split_for(size, balance.error_rate);
            Error::InsufficientRecords(format!(
                "need {size} records ({wrong} misclassified, {right} correct) per group, group has {}",
                counts(g)
            ))
        })?;
        chosen.extend(picked.into_iter().map(|r| r as *const SaliencyRecord));
    }
    Ok(kept
        .into_iter()
        .filter(|r| chosen.contains(&(*r as *const SaliencyRecord)))
        .cloned()
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(scores: &[f64]) -> SaliencyRecord {
        labelled("r", scores, "a", "a")
    }

    fn labelled(id: &str, scores: &[f64], pred: &str, gold: &str) -> SaliencyRecord {
        let tokens = (0..scores.len()).map(|i| format!("t{i}")).collect();
        SaliencyRecord::new(id, "d", tokens, scores.to_vec(), pred, gold, vec!["a".into(), "b".into()]).unwrap()
    }

    fn sel(ix: &[usize]) -> TokenSelection {
        ix.iter().copied().collect()
    }

    fn scored(record: &SaliencyRecord, ix: &[usize], source: CandidateSource, accepted: bool) -> ScoredCandidate {
        let values: Vec<f64> = ix.iter().map(|&i| record.scores()[i]).collect();
        ScoredCandidate {
            score: values.iter().sum::<f64>() / values.len() as f64,
            candidate: RawCandidate {
                indices: sel(ix),
                values,
                source,
                window_offset: ix[0],
            },
            accepted,
        }
    }

    fn span(ix: &[usize], cov: f64) -> MergedSpan {
        MergedSpan {
            indices: sel(ix),
            coverage_positive: cov,
            origin: BTreeSet::new(),
        }
    }

    #[test]
    fn pool_falls_back_to_singletons() {
        let r = record(&[0.1, 0.5, 0.3, 0.2, 0.4, 0.0]);
        let pool = pool_candidates(&r, &[], &[], 3);
        let sets: Vec<_> = pool.iter().map(|c| c.indices.clone()).collect();
        assert_eq!(sets, vec![sel(&[1]), sel(&[2]), sel(&[4])]);
        assert!(pool.iter().all(|c| c.source == CandidateSource::TopK));
    }

    #[test]
    fn pool_saturates_on_short_records() {
        let r = record(&[0.1, 0.5, 0.3, 0.2]);
        assert_eq!(pool_candidates(&r, &[], &[], 5).len(), 4);
    }

    #[test]
    fn pool_dedups_identical_sets_keeping_higher_score() {
        let r = record(&[0.1, 0.9, 0.8, 0.05]);
        let conv = vec![scored(&r, &[1, 2], CandidateSource::Convolution, true)];
        let mut span_c = scored(&r, &[1, 2], CandidateSource::Span, true);
        span_c.score += 1.0;
        let pool = pool_candidates(&r, &conv, &[span_c], 1);
        let pairs: Vec<_> = pool.iter().filter(|c| c.indices == sel(&[1, 2])).collect();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].source, CandidateSource::Span);
    }

    #[test]
    fn pool_ignores_rejected_and_limits_per_source() {
        let r = record(&[0.1, 0.9, 0.8, 0.05, 0.6]);
        let conv = vec![
            scored(&r, &[0, 3], CandidateSource::Convolution, false),
            scored(&r, &[1, 2], CandidateSource::Convolution, true),
            scored(&r, &[1, 2], CandidateSource::Convolution, true),
            scored(&r, &[2, 4], CandidateSource::Convolution, true),
        ];
        let pool = pool_candidates(&r, &conv, &[], 2);
        let sets: Vec<_> = pool.iter().map(|c| c.indices.clone()).collect();
        assert_eq!(sets, vec![sel(&[1, 2]), sel(&[2, 4]), sel(&[1]), sel(&[2])]);
    }

    #[test]
    fn merge_examples() {
        let r = record(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        let mk = |ix: &[usize], source| RawCandidate {
            indices: sel(ix),
            values: vec![],
            source,
            window_offset: 0,
        };
        let merged = merge_adjacent(&[mk(&[2, 3], CandidateSource::Span), mk(&[4], CandidateSource::TopK)], &r).unwrap();
        assert_eq!(merged.len(), 1);
        assert_eq!(merged[0].indices, sel(&[2, 3, 4]));
        assert_eq!(
            merged[0].origin,
            [CandidateSource::Span, CandidateSource::TopK].into_iter().collect()
        );
        assert!((merged[0].coverage_positive - 1.2 / 2.1).abs() < 1e-12);

        let merged = merge_adjacent(&[mk(&[0], CandidateSource::TopK), mk(&[5], CandidateSource::TopK)], &r).unwrap();
        assert_eq!(merged.len(), 2);

        let merged = merge_adjacent(
            &[mk(&[1, 3], CandidateSource::Convolution), mk(&[2], CandidateSource::TopK)],
            &r,
        )
        .unwrap();
        assert_eq!(merged.len(), 1);
        assert_eq!(merged[0].indices, sel(&[1, 2, 3]));
    }

    #[test]
    fn quantile_select_examples() {
        let spans: Vec<_> = [0.1, 0.2, 0.3, 0.4].iter().enumerate().map(|(i, &c)| span(&[i * 2], c)).collect();
        let kept = quantile_select(&spans, 0.75).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].coverage_positive, 0.4);

        let one = [span(&[3], 0.05)];
        assert_eq!(quantile_select(&one, 0.75).unwrap(), one.to_vec());

        let flat: Vec<_> = (0..4).map(|i| span(&[i * 2], 0.2)).collect();
        assert_eq!(quantile_select(&flat, 0.75).unwrap().len(), 4);

        assert!(matches!(quantile_select(&[], 0.5), Err(Error::NoSpans)));
    }

    #[test]
    fn quantile_select_orders_by_coverage() {
        let spans = vec![span(&[0], 0.3), span(&[2], 0.5), span(&[4], 0.4), span(&[6], 0.0)];
        let kept = quantile_select(&spans, 0.5).unwrap();
        let covs: Vec<f64> = kept.iter().map(|s| s.coverage_positive).collect();
        assert_eq!(covs, vec![0.5, 0.4]);
    }

    #[test]
    fn dominant_token_yields_one_span_around_it() {
        let mut scores = vec![0.01; 12];
        scores[6] = 10.0;
        let r = record(&scores);
        let spans = summarize(&r, &SelectConfig::default(), &ScoringConfig::default(), 5, 5).unwrap();
        assert_eq!(spans.len(), 1);
        assert!(spans[0].indices.contains(6));
    }

    #[test]
    fn uniform_scores_reduce_to_top_k() {
        let r = record(&[0.2; 10]);
        let summarizer = Summarizer::new(SelectConfig::default(), ScoringConfig::default(), 5, 5).unwrap();
        let (conv, span) = summarizer.scored_candidates(&r).unwrap();
        assert!(conv.iter().chain(&span).all(|c| !c.accepted));
        // top-5 singletons are tokens 0..5, merged into one run.
        let spans = summarizer.summarize(&r).unwrap();
        assert_eq!(spans.len(), 1);
        assert_eq!(spans[0].indices, sel(&[0, 1, 2, 3, 4]));
        assert!((spans[0].coverage_positive - 0.5).abs() < 1e-12);
        assert_eq!(spans[0].origin, [CandidateSource::TopK].into_iter().collect());
    }

    #[test]
    fn summarize_handles_tiny_and_negative_records() {
        let cfg = SelectConfig::default();
        for scoring in [
            ScoringConfig::default(),
            ScoringConfig {
                metric: ScoringMetric::Quantile,
                ..ScoringConfig::default()
            },
        ] {
            for scores in [&[0.3][..], &[-0.3], &[-0.2, -0.4, -0.1], &[0.5, -0.5]] {
                let spans = summarize(&record(scores), &cfg, &scoring, 5, 1).unwrap();
                assert!(!spans.is_empty());
            }
        }
        assert!(matches!(
            summarize(&record(&[0.0, 0.0]), &cfg, &ScoringConfig::default(), 5, 5),
            Err(Error::ZeroMass)
        ));
    }

    #[test]
    fn max_final_truncates() {
        let scores: Vec<f64> = (0..30).map(|i| if i % 4 == 0 { 1.0 } else { 0.01 }).collect();
        let cfg = SelectConfig {
            q: 0.1,
            max_final: Some(2),
            ..SelectConfig::default()
        };
        let spans = summarize(&record(&scores), &cfg, &ScoringConfig::default(), 5, 5).unwrap();
        assert!(spans.len() <= 2);
    }

    #[test]
    fn subset_filter_drops_long_and_diffuse_records() {
        let long = labelled("long", &vec![0.5; 100], "a", "a");
        // 30 equal positive scores: top-5 covers 5/30 = 0.1667, passes.
        let ok = labelled("ok", &vec![0.5; 30], "a", "a");
        // 50 equal positive scores: top-5 covers 0.10.
        let diffuse = labelled("diffuse", &vec![0.5; 50], "a", "a");
        let kept = subset_filter(&[long, ok.clone(), diffuse], &SubsetHeuristics::default()).unwrap();
        assert_eq!(kept, vec![ok]);
    }

    #[test]
    fn subset_filter_without_balance_preserves_order() {
        let rs: Vec<_> = ["z", "m", "a"].iter().map(|id| labelled(id, &[1.0, 0.2], "a", "b")).collect();
        assert_eq!(subset_filter(&rs, &SubsetHeuristics::default()).unwrap(), rs);
    }

    #[test]
    fn subset_filter_balances_labels_and_errors() {
        let mut rs = Vec::new();
        for i in 0..6 {
            rs.push(labelled(&format!("a{i}"), &[1.0, 0.1], if i < 2 { "b" } else { "a" }, "a"));
        }
        for i in 0..3 {
            rs.push(labelled(&format!("b{i}"), &[1.0, 0.1], if i < 1 { "a" } else { "b" }, "b"));
        }
        let h = SubsetHeuristics {
            balance: Balance {
                labels: true,
                error_rate: Some(0.25),
                target: None,
            },
            ..SubsetHeuristics::default()
        };
        let kept = subset_filter(&rs, &h).unwrap();
        // Largest per-label size with round(0.25 m) errors available: m = 3 -> 1 wrong, 2 right.
        let ids: Vec<&str> = kept.iter().map(|r| r.id()).collect();
        assert_eq!(ids, vec!["a0", "a2", "a3", "b0", "b1", "b2"]);
        assert_eq!(kept.iter().filter(|r| r.is_misclassified()).count(), 2);

        let infeasible = SubsetHeuristics {
            balance: Balance {
                labels: true,
                error_rate: None,
                target: Some(5),
            },
            ..SubsetHeuristics::default()
        };
        assert!(matches!(subset_filter(&rs, &infeasible), Err(Error::InsufficientRecords(_))));
    }
}
