use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record::SaliencyRecord;

pub const SAMPLE_SLOT: &str = "{sample}";
pub const LABEL_SLOT: &str = "{label_str}";

const IMDB_INSTRUCTION: &str = "Movie review with importance scores: {sample}.\n\
A sentiment analyzer has predicted this text as '{label_str} sentiment'. \
The scores behind each word indicate how important it was for the analyzer to predict '{label_str} sentiment'. \
The scores have been determined after the sentiment analyzer has already made its prediction. \
The sentiment analyzer cannot base its prediction on the scores, only on the movie review itself.\n\
Based on the importance scores, briefly explain why the sentiment analyzer has predicted this movie review as '{label_str} sentiment':";

const AG_NEWS_INSTRUCTION: &str = "News article with importance scores: {sample}.\n\
A topic classifier has predicted this text as '{label_str}'. \
The scores behind each word indicate how important it was for the classifier to predict '{label_str}'. \
The scores have been determined after the topic classifier has already made its prediction. \
The topic classifier cannot base its prediction on the scores, only on the news article itself.\n\
Based on the importance scores, briefly explain why the topic classifier has predicted this news article as '{label_str}':";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub dataset: String,
    pub instruction_template: String,
    pub score_decimals: usize,
}

fn canonical_dataset(name: &str) -> String {
    name.trim().to_lowercase().replace(['-', ' '], "_")
}

impl PromptSpec {
    pub fn new(dataset: impl Into<String>, instruction_template: impl Into<String>, score_decimals: usize) -> Result<Self> {
        let spec = PromptSpec {
            dataset: dataset.into(),
            instruction_template: instruction_template.into(),
            score_decimals,
        };
        for slot in [SAMPLE_SLOT, LABEL_SLOT] {
            if !spec.instruction_template.contains(slot) {
                return Err(Error::InvalidConfig(format!("instruction template lacks the {slot} slot")));
            }
        }
        if score_decimals > 12 {
            return Err(Error::InvalidConfig(format!("score_decimals {score_decimals} exceeds 12")));
        }
        Ok(spec)
    }

    /// Built-in instruction for `imdb` or `ag_news`.
    pub fn builtin(dataset: &str) -> Option<Self> {
        let template = match canonical_dataset(dataset).as_str() {
            "imdb" => IMDB_INSTRUCTION,
            "ag_news" | "agnews" => AG_NEWS_INSTRUCTION,
            _ => return None,
        };
        Some(PromptSpec {
            dataset: dataset.to_string(),
            instruction_template: template.to_string(),
            score_decimals: 2,
        })
    }

    pub fn matches(&self, record: &SaliencyRecord) -> bool {
        canonical_dataset(&self.dataset) == canonical_dataset(record.dataset())
    }
}

/// Rounds half away from zero to `decimals` places and formats without a
/// negative zero.
pub fn format_score(score: f64, decimals: usize) -> String {
    let scale = 10f64.powi(decimals as i32);
    let mut rounded = (score * scale).round() / scale;
    if rounded == 0.0 {
        rounded = 0.0;
    }
    format!("{rounded:.decimals$}")
}

/// `token (score)` pairs joined by single spaces, e.g.
/// `definitely (0.75) a (0.14) girl (-0.31)`.
pub fn format_scored_text(record: &SaliencyRecord, decimals: usize) -> String {
    record
        .tokens()
        .iter()
        .zip(record.scores())
        .map(|(t, &s)| format!("{t} ({})", format_score(s, decimals)))
        .collect::<Vec<_>>()
        .join(" ")
}

fn as_score(piece: &str) -> Option<f64> {
    let inner = piece.strip_prefix('(')?.strip_suffix(')')?;
    let digits = inner.strip_prefix('-').unwrap_or(inner);
    let valid = !digits.is_empty()
        && digits.chars().all(|c| c.is_ascii_digit() || c == '.')
        && digits.chars().filter(|&c| c == '.').count() <= 1
        && digits.chars().next().is_some_and(|c| c.is_ascii_digit());
    if valid {
        inner.parse().ok()
    } else {
        None
    }
}

/// Reads back the output of [`format_scored_text`].
///
/// A space-separated piece that looks like `(number)` closes the current
/// token; at the start of a token it is part of the token instead. Tokens
/// may contain spaces, but a space followed by a bracketed number inside a
/// token is read as a boundary.
pub fn parse_scored_text(text: &str) -> Result<Vec<(String, f64)>> {
    let mut out = Vec::new();
    let mut pending: Option<String> = None;
    for piece in text.split(' ') {
        match (as_score(piece), pending.take()) {
            (Some(score), Some(token)) => out.push((token, score)),
            (None, Some(mut token)) => {
                token.push(' ');
                token.push_str(piece);
                pending = Some(token);
            }
            (_, None) => pending = Some(piece.to_string()),
        }
    }
    if let Some(token) = pending {
        return Err(Error::InvalidRecord(format!("token {token:?} has no score")));
    }
    Ok(out)
}

/// Fills `{sample}` with the scored text and `{label_str}` with the
/// predicted label. Inserted text is not scanned for further slots.
pub fn build_instruction(record: &SaliencyRecord, spec: &PromptSpec) -> Result<String> {
    if !spec.matches(record) {
        return Err(Error::DatasetMismatch {
            expected: spec.dataset.clone(),
            found: record.dataset().to_string(),
        });
    }
    let sample = format_scored_text(record, spec.score_decimals);
    let mut out = String::with_capacity(spec.instruction_template.len() + sample.len());
    let mut rest = spec.instruction_template.as_str();
    loop {
        let next = [(SAMPLE_SLOT, sample.as_str()), (LABEL_SLOT, record.predicted_label())]
            .into_iter()
            .filter_map(|(slot, value)| rest.find(slot).map(|at| (at, slot, value)))
            .min_by_key(|&(at, _, _)| at);
        match next {
            Some((at, slot, value)) => {
                out.push_str(&rest[..at]);
                out.push_str(value);
                rest = &rest[at + slot.len()..];
            }
            None => {
                out.push_str(rest);
                break;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(dataset: &str, words: &[&str], scores: &[f64], pred: &str, gold: &str) -> SaliencyRecord {
        SaliencyRecord::new(
            "r1",
            dataset,
            words.iter().map(|w| w.to_string()).collect(),
            scores.to_vec(),
            pred,
            gold,
            vec![
                "negative".into(),
                "positive".into(),
                "World".into(),
                "Sports".into(),
                "Business".into(),
                "Sci/Tech".into(),
            ],
        )
        .unwrap()
    }

    fn movie() -> SaliencyRecord {
        record(
            "imdb",
            &["definitely", "a", "girl", "movie"],
            &[0.75, 0.14, -0.31, 0.15],
            "negative",
            "positive",
        )
    }

    #[test]
    fn scored_text_matches_reference_string() {
        assert_eq!(
            format_scored_text(&movie(), 2),
            "definitely (0.75) a (0.14) girl (-0.31) movie (0.15)"
        );
    }

    #[test]
    fn rounding_rules() {
        assert_eq!(format_score(0.0, 2), "0.00");
        assert_eq!(format_score(0.005, 2), "0.01");
        assert_eq!(format_score(-0.005, 2), "-0.01");
        assert_eq!(format_score(0.015, 2), "0.02");
        assert_eq!(format_score(-0.001, 2), "0.00");
        assert_eq!(format_score(1.23456, 3), "1.235");
    }

    #[test]
    fn parser_recovers_pairs() {
        let parsed = parse_scored_text("definitely (0.75) a (0.14) girl (-0.31) movie (0.15)").unwrap();
        assert_eq!(parsed[2], ("girl".to_string(), -0.31));
        assert_eq!(parsed.len(), 4);
        let odd = parse_scored_text("f(x) (0.10) (a) (-1.00)").unwrap();
        assert_eq!(odd, vec![("f(x)".to_string(), 0.1), ("(a)".to_string(), -1.0)]);
        assert!(parse_scored_text("dangling").is_err());
        assert!(parse_scored_text("(0.10)").is_err());
        let bracketed = parse_scored_text("(0.3) (0.12) x (1.00)").unwrap();
        assert_eq!(bracketed, vec![("(0.3)".to_string(), 0.12), ("x".to_string(), 1.0)]);
    }

    #[test]
    fn imdb_instruction() {
        let spec = PromptSpec::builtin("imdb").unwrap();
        let prompt = build_instruction(&movie(), &spec).unwrap();
        assert!(prompt.contains("predicted this text as 'negative sentiment'"));
        assert!(prompt.contains("definitely (0.75) a (0.14) girl (-0.31) movie (0.15)."));
        assert!(!prompt.contains(SAMPLE_SLOT) && !prompt.contains(LABEL_SLOT));
        assert!(!prompt.contains("positive"));
    }

    #[test]
    fn ag_news_instruction() {
        let r = record("ag_news", &["Stocks", "fell"], &[0.3, 0.6], "Business", "World");
        let prompt = build_instruction(&r, &PromptSpec::builtin("ag_news").unwrap()).unwrap();
        assert!(prompt.contains("predicted this news article as 'Business'"));
        assert_eq!(prompt.matches("'Business'").count(), 3);
        assert!(!prompt.contains("World"));
    }

    #[test]
    fn slot_values_are_not_rescanned() {
        let r = record("imdb", &["{label_str}"], &[0.5], "negative", "negative");
        let prompt = build_instruction(&r, &PromptSpec::builtin("imdb").unwrap()).unwrap();
        assert!(prompt.contains("{label_str} (0.50)"));
    }

    #[test]
    fn dataset_mismatch() {
        let err = build_instruction(&movie(), &PromptSpec::builtin("ag_news").unwrap());
        assert!(matches!(err, Err(Error::DatasetMismatch { .. })));
    }

    #[test]
    fn custom_spec_requires_both_slots() {
        assert!(PromptSpec::new("x", "only {sample}", 2).is_err());
        assert!(PromptSpec::new("x", "{sample} / {label_str}", 2).is_ok());
    }
}
