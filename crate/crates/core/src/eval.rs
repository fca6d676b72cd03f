//! Explainer-faithfulness evaluation of verbalizations.
//!
//! Quoted phrases are read back out of a verbalization and matched against
//! the input tokens. From the matches we derive citation accuracy (how many
//! quoted phrases exist in the input), positive coverage at `k` against the
//! top-`k` tokens, and how often each attribution rank is mentioned.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::coverage::{coverage_positive_or_zero, top_k_indices, Polarity};
use crate::error::{Error, Result};
use crate::parallel;
use crate::realize::{display_token, QUOTE_STYLES};
use crate::record::{SaliencyRecord, TokenSelection};
use crate::verbalization::Verbalization;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    #[default]
    QuotedOnly,
    AllContentWords,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MentionExtraction {
    pub mentioned: TokenSelection,
    /// Quoted phrases with no counterpart in the input.
    pub unmatched_phrases: Vec<String>,
    pub match_mode: MatchMode,
    pub quoted_phrases: usize,
    /// Quoted phrases reproducing the input with exact case and punctuation.
    pub case_exact_matches: usize,
}

const BUILTIN_STOPWORDS: &str = "a about above after again against all am an and any are as at be because been \
before being below between both but by can could did do does doing down during each few for from further had has \
have having he her here hers herself him himself his how i if in into is it its itself just me more most my myself \
no nor not now of off on once only or other our ours ourselves out over own same she should so some such than that \
the their theirs them themselves then there these they this those through to too under until up very was we were \
what when where which while who whom why will with would you your yours yourself yourselves word words token tokens \
phrase phrases model prediction predicted important importance score scores";

#[derive(Debug, Clone, PartialEq)]
pub struct StopWords(HashSet<String>);

impl Default for StopWords {
    fn default() -> Self {
        StopWords::from_text(BUILTIN_STOPWORDS)
    }
}

impl StopWords {
    /// Whitespace-separated word list.
    pub fn from_text(text: &str) -> Self {
        StopWords(text.split_whitespace().map(str::to_lowercase).collect())
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(word)
    }
}

/// Lowercases, trims non-alphanumeric characters from both ends, and
/// collapses internal whitespace.
pub fn normalize(text: &str) -> String {
    let lower = text.to_lowercase();
    lower
        .trim_matches(|c: char| !c.is_alphanumeric())
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

fn collapse(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Phrases enclosed in matching quotes. An opening quote must not follow a
/// letter or digit and a closing quote must not precede one, so apostrophes
/// inside words are not read as quotes.
pub fn quoted_phrases(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let opens_after_boundary = i == 0 || !chars[i - 1].is_alphanumeric();
        let style = QUOTE_STYLES.iter().find(|(open, _)| *open == chars[i]);
        if let (true, Some(&(_, close))) = (opens_after_boundary, style) {
            let end = (i + 1..chars.len())
                .find(|&j| chars[j] == close && chars.get(j + 1).is_none_or(|c| !c.is_alphanumeric()));
            if let Some(j) = end {
                out.push(chars[i + 1..j].iter().collect());
                i = j + 1;
                continue;
            }
        }
        i += 1;
    }
    out
}

struct PhraseMatch {
    positions: Vec<usize>,
    case_exact: bool,
}

/// Every contiguous token run whose display text equals `phrase`, either
/// verbatim or after normalization. Normalized matches must start and end
/// on tokens with letters or digits, so surrounding punctuation is not
/// counted as mentioned.
fn match_phrase(phrase: &str, record: &SaliencyRecord) -> PhraseMatch {
    let target = normalize(phrase);
    let raw_target = collapse(phrase);
    let target_len = target.chars().count();
    let displays: Vec<&str> = record.tokens().iter().map(|t| display_token(t)).collect();
    let mut positions = Vec::new();
    let mut case_exact = false;
    for start in 0..displays.len() {
        let mut joined = String::new();
        for (end, display) in displays.iter().enumerate().skip(start) {
            if end > start {
                joined.push(' ');
            }
            joined.push_str(display);
            let norm = normalize(&joined);
            let exact = collapse(&joined) == raw_target;
            let hit = exact
                || (!target.is_empty()
                    && norm == target
                    && !normalize(displays[start]).is_empty()
                    && !normalize(display).is_empty());
            if hit {
                positions.extend(start..=end);
                case_exact |= exact;
            }
            if !target.is_empty() && norm.chars().count() > target_len {
                break;
            }
            if target.is_empty() && collapse(&joined).chars().count() > raw_target.chars().count() {
                break;
            }
        }
    }
    PhraseMatch { positions, case_exact }
}

pub fn extract_mentions(text: &str, record: &SaliencyRecord, mode: MatchMode) -> MentionExtraction {
    extract_mentions_with(text, record, mode, &StopWords::default())
}

pub fn extract_mentions_with(
    text: &str,
    record: &SaliencyRecord,
    mode: MatchMode,
    stopwords: &StopWords,
) -> MentionExtraction {
    let phrases = quoted_phrases(text);
    let mut mentioned: Vec<usize> = Vec::new();
    let mut unmatched = Vec::new();
    let mut case_exact_matches = 0;
    for phrase in &phrases {
        let m = match_phrase(phrase, record);
        if m.positions.is_empty() {
            unmatched.push(phrase.clone());
        } else {
            mentioned.extend(m.positions);
            case_exact_matches += m.case_exact as usize;
        }
    }
    if mode == MatchMode::AllContentWords {
        let words: HashSet<String> = text
            .split_whitespace()
            .map(normalize)
            .filter(|w| !w.is_empty() && !stopwords.contains(w))
            .collect();
        mentioned.extend(
            record
                .tokens()
                .iter()
                .enumerate()
                .filter(|(_, t)| words.contains(&normalize(display_token(t))))
                .map(|(i, _)| i),
        );
    }
    MentionExtraction {
        mentioned: mentioned.into_iter().collect(),
        unmatched_phrases: unmatched,
        match_mode: mode,
        quoted_phrases: phrases.len(),
        case_exact_matches,
    }
}

/// Share of quoted phrases, over the whole corpus, found in their input.
pub fn citation_accuracy(extractions: &[MentionExtraction]) -> Result<f64> {
    let total: usize = extractions.iter().map(|e| e.quoted_phrases).sum();
    if total == 0 {
        return Err(Error::NoMentions);
    }
    let unmatched: usize = extractions.iter().map(|e| e.unmatched_phrases.len()).sum();
    Ok((total - unmatched) as f64 / total as f64)
}

/// Share of quoted phrases reproducing the input with exact case.
pub fn case_exact_accuracy(extractions: &[MentionExtraction]) -> Result<f64> {
    let total: usize = extractions.iter().map(|e| e.quoted_phrases).sum();
    if total == 0 {
        return Err(Error::NoMentions);
    }
    let exact: usize = extractions.iter().map(|e| e.case_exact_matches).sum();
    Ok(exact as f64 / total as f64)
}

/// Pairs each record with its verbalization by id. Every record needs
/// exactly one verbalization.
pub fn align<'a>(
    records: &'a [SaliencyRecord],
    verbs: &'a [Verbalization],
) -> Result<Vec<(&'a SaliencyRecord, &'a Verbalization)>> {
    let mut by_id: BTreeMap<&str, &Verbalization> = BTreeMap::new();
    let mut unknown = Vec::new();
    let record_ids: HashSet<&str> = records.iter().map(SaliencyRecord::id).collect();
    for v in verbs {
        if !record_ids.contains(v.record_id.as_str()) {
            unknown.push(v.record_id.clone());
        } else if by_id.insert(&v.record_id, v).is_some() {
            unknown.push(format!("{} (duplicate)", v.record_id));
        }
    }
    let missing: Vec<String> = records
        .iter()
        .filter(|r| !by_id.contains_key(r.id()))
        .map(|r| r.id().to_string())
        .collect();
    if !missing.is_empty() || !unknown.is_empty() {
        return Err(Error::Alignment { missing, unknown });
    }
    Ok(records.iter().map(|r| (r, by_id[r.id()])).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageCurve {
    /// `mean[k-1]`: mean positive coverage of `mentioned ∩ top-k`.
    pub mean: Vec<f64>,
    /// `upper_bound[k-1]`: mean positive coverage of the top-k tokens.
    pub upper_bound: Vec<f64>,
}

fn curve_for(record: &SaliencyRecord, mentioned: &TokenSelection, max_k: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut mean = Vec::with_capacity(max_k);
    let mut upper = Vec::with_capacity(max_k);
    for k in 1..=max_k {
        let top = top_k_indices(record, k, Polarity::PositiveOnly);
        mean.push(coverage_positive_or_zero(record, &mentioned.intersection(&top))?);
        upper.push(coverage_positive_or_zero(record, &top)?);
    }
    Ok((mean, upper))
}

fn mean_columns(rows: &[(Vec<f64>, Vec<f64>)], max_k: usize) -> CoverageCurve {
    let n = rows.len().max(1) as f64;
    let mut curve = CoverageCurve {
        mean: vec![0.0; max_k],
        upper_bound: vec![0.0; max_k],
    };
    for (mean, upper) in rows {
        for k in 0..max_k {
            curve.mean[k] += mean[k] / n;
            curve.upper_bound[k] += upper[k] / n;
        }
    }
    curve
}

/// Coverage⁺@k for `k = 1..=max_k`, averaged over records, along with the
/// top-k upper bound.
pub fn coverage_pos_at_k(verbs: &[Verbalization], records: &[SaliencyRecord], max_k: usize) -> Result<CoverageCurve> {
    let pairs = align(records, verbs)?;
    let rows = parallel::map(&pairs, |(r, v)| curve_for(r, &v.mentioned, max_k))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_columns(&rows, max_k))
}

/// Top-k upper bound alone, for corpora without verbalizations.
pub fn upper_bound_at_k(records: &[SaliencyRecord], max_k: usize) -> Result<Vec<f64>> {
    let rows = parallel::map(records, |r| curve_for(r, &TokenSelection::empty(), max_k))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_columns(&rows, max_k).upper_bound)
}

/// `counts[k-1]`: records whose verbalization mentions the token of
/// attribution rank `k` (signed, descending, ties to the lower index).
pub fn rank_mention_counts(verbs: &[Verbalization], records: &[SaliencyRecord], max_k: usize) -> Result<Vec<usize>> {
    let pairs = align(records, verbs)?;
    let mut counts = vec![0; max_k];
    for (record, verb) in pairs {
        for (rank, &index) in record.rank_order().iter().take(max_k).enumerate() {
            if verb.mentioned.contains(index) {
                counts[rank] += 1;
            }
        }
    }
    Ok(counts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaithfulnessReport {
    pub n_records: usize,
    pub quoted_phrases: usize,
    pub unmatched_phrases: usize,
    /// `None` when no verbalization quotes anything.
    pub citation_accuracy: Option<f64>,
    pub case_exact_accuracy: Option<f64>,
    pub coverage_pos_at_k: Vec<f64>,
    pub upper_bound_at_k: Vec<f64>,
    pub rank_mention_counts: Vec<usize>,
    /// Records whose stored coverage disagrees with a recomputation.
    pub coverage_mismatches: Vec<String>,
}

/// Full evaluation of aligned `(records, verbs)` up to rank `max_k`.
pub fn evaluate(
    records: &[SaliencyRecord],
    verbs: &[Verbalization],
    max_k: usize,
    mode: MatchMode,
) -> Result<FaithfulnessReport> {
    let pairs = align(records, verbs)?;
    let extractions = parallel::map(&pairs, |(r, v)| extract_mentions(&v.text, r, mode));
    let curve = coverage_pos_at_k(verbs, records, max_k)?;
    let counts = rank_mention_counts(verbs, records, max_k)?;
    let optional = |r: Result<f64>| match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::NoMentions) => Ok(None),
        Err(e) => Err(e),
    };
    Ok(FaithfulnessReport {
        n_records: records.len(),
        quoted_phrases: extractions.iter().map(|e| e.quoted_phrases).sum(),
        unmatched_phrases: extractions.iter().map(|e| e.unmatched_phrases.len()).sum(),
        citation_accuracy: optional(citation_accuracy(&extractions))?,
        case_exact_accuracy: optional(case_exact_accuracy(&extractions))?,
        coverage_pos_at_k: curve.mean,
        upper_bound_at_k: curve.upper_bound,
        rank_mention_counts: counts,
        coverage_mismatches: pairs
            .iter()
            .filter(|(r, v)| !v.coverage_consistent(r))
            .map(|(r, _)| r.id().to_string())
            .collect(),
    })
}

impl FaithfulnessReport {
    /// `k,mean_cov,upper_bound` rows.
    pub fn coverage_csv(&self) -> String {
        let mut out = String::from("k,mean_cov,upper_bound\n");
        for (k, (m, u)) in self.coverage_pos_at_k.iter().zip(&self.upper_bound_at_k).enumerate() {
            writeln!(out, "{},{m},{u}", k + 1).expect("writing to a String");
        }
        out
    }

    pub fn text_table(&self) -> String {
        let pct = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{:.2}%", v * 100.0));
        let mut out = String::new();
        writeln!(out, "records            {}", self.n_records).unwrap();
        writeln!(out, "quoted phrases     {}", self.quoted_phrases).unwrap();
        writeln!(out, "unmatched phrases  {}", self.unmatched_phrases).unwrap();
        writeln!(out, "citation accuracy  {}", pct(self.citation_accuracy)).unwrap();
        writeln!(out, "case-exact         {}", pct(self.case_exact_accuracy)).unwrap();
        if !self.coverage_mismatches.is_empty() {
            writeln!(out, "coverage mismatch  {}", self.coverage_mismatches.len()).unwrap();
        }
        writeln!(out, "\n  k   cov+@k   top-k   rank-k mentions").unwrap();
        for k in 0..self.coverage_pos_at_k.len() {
            writeln!(
                out,
                "{:>3}  {:>6.2}%  {:>6.2}%  {:>6}",
                k + 1,
                self.coverage_pos_at_k[k] * 100.0,
                self.upper_bound_at_k[k] * 100.0,
                self.rank_mention_counts[k]
            )
            .unwrap();
        }
        out
    }
}
