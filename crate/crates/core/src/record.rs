//! Saliency records and token selections.
//!
//! A [`SaliencyRecord`] is one explained instance: the input tokens, one
//! attribution score per token, the predicted and true labels, and the label
//! inventory of the task. Records are validated on construction and are
//! immutable afterwards.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRecord")]
pub struct SaliencyRecord {
    id: String,
    dataset: String,
    tokens: Vec<String>,
    scores: Vec<f64>,
    predicted_label: String,
    true_label: String,
    label_set: Vec<String>,
}

/// Unvalidated wire form of a record. Unknown keys are ignored.
#[derive(Debug, Deserialize)]
struct RawRecord {
    id: String,
    dataset: String,
    tokens: Vec<String>,
    scores: Vec<f64>,
    predicted_label: String,
    true_label: String,
    label_set: Vec<String>,
}

impl TryFrom<RawRecord> for SaliencyRecord {
    type Error = Error;

    fn try_from(raw: RawRecord) -> Result<Self> {
        SaliencyRecord::new(
            raw.id,
            raw.dataset,
            raw.tokens,
            raw.scores,
            raw.predicted_label,
            raw.true_label,
            raw.label_set,
        )
    }
}

impl SaliencyRecord {
    pub fn new(
        id: impl Into<String>,
        dataset: impl Into<String>,
        tokens: Vec<String>,
        scores: Vec<f64>,
        predicted_label: impl Into<String>,
        true_label: impl Into<String>,
        label_set: Vec<String>,
    ) -> Result<Self> {
        let record = SaliencyRecord {
            id: id.into(),
            dataset: dataset.into(),
            tokens,
            scores,
            predicted_label: predicted_label.into(),
            true_label: true_label.into(),
            label_set,
        };
        record.validate()?;
        Ok(record)
    }

    fn validate(&self) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::InvalidRecord(format!("record {:?} has no tokens", self.id)));
        }
        if self.tokens.len() != self.scores.len() {
            return Err(Error::InvalidRecord(format!(
                "record {:?} has {} tokens but {} scores",
                self.id,
                self.tokens.len(),
                self.scores.len()
            )));
        }
        if let Some(pos) = self.scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidRecord(format!(
                "record {:?} has a non-finite score at position {pos}",
                self.id
            )));
        }
        for (what, label) in [("predicted", &self.predicted_label), ("true", &self.true_label)] {
            if !self.label_set.contains(label) {
                return Err(Error::InvalidRecord(format!(
                    "record {:?}: {what} label {label:?} is not in the label set",
                    self.id
                )));
            }
        }
        Ok(())
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn dataset(&self) -> &str {
        &self.dataset
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn predicted_label(&self) -> &str {
        &self.predicted_label
    }

    pub fn true_label(&self) -> &str {
        &self.true_label
    }

    pub fn label_set(&self) -> &[String] {
        &self.label_set
    }

    /// Number of tokens (always at least 1).
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn is_misclassified(&self) -> bool {
        self.predicted_label != self.true_label
    }

    /// Returns a copy with every score multiplied by `factor`.
    pub fn rescaled(&self, factor: f64) -> Result<Self> {
        let mut out = self.clone();
        out.scores.iter_mut().for_each(|s| *s *= factor);
        out.validate()?;
        Ok(out)
    }

    /// Token positions ordered by signed score, highest first; ties keep the
    /// lower index first.
    pub fn rank_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]).then(a.cmp(&b)));
        order
    }
}

/// A strictly increasing list of token positions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct TokenSelection(Vec<usize>);

impl TryFrom<Vec<usize>> for TokenSelection {
    type Error = Error;

    fn try_from(indices: Vec<usize>) -> Result<Self> {
        if let Some(w) = indices.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::InvalidSelection(format!(
                "indices must be strictly increasing, found {} before {}",
                w[0], w[1]
            )));
        }
        Ok(TokenSelection(indices))
    }
}

impl From<TokenSelection> for Vec<usize> {
    fn from(sel: TokenSelection) -> Self {
        sel.0
    }
}

impl FromIterator<usize> for TokenSelection {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        let mut v: Vec<usize> = iter.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        TokenSelection(v)
    }
}

impl TokenSelection {
    pub fn empty() -> Self {
        TokenSelection(Vec::new())
    }

    /// Every position of an `n`-token input.
    pub fn all(n: usize) -> Self {
        TokenSelection((0..n).collect())
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.0.binary_search(&index).is_ok()
    }

    pub fn is_subset(&self, other: &TokenSelection) -> bool {
        self.iter().all(|i| other.contains(i))
    }

    /// Checks that every index addresses a token of `record`.
    pub fn check_bounds(&self, record: &SaliencyRecord) -> Result<()> {
        match self.0.last() {
            Some(&last) if last >= record.len() => Err(Error::InvalidSelection(format!(
                "index {last} out of range for {} tokens",
                record.len()
            ))),
            _ => Ok(()),
        }
    }

    pub fn union(&self, other: &TokenSelection) -> TokenSelection {
        self.iter().chain(other.iter()).collect()
    }

    pub fn intersection(&self, other: &TokenSelection) -> TokenSelection {
        TokenSelection(self.iter().filter(|&i| other.contains(i)).collect())
    }

    /// Splits the selection into maximal runs of consecutive positions.
    pub fn runs(&self) -> Vec<TokenSelection> {
        let mut runs: Vec<TokenSelection> = Vec::new();
        for i in self.iter() {
            match runs.last_mut() {
                Some(run) if i > 0 && run.0.last() == Some(&(i - 1)) => run.0.push(i),
                _ => runs.push(TokenSelection(vec![i])),
            }
        }
        runs
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(words: &[&str]) -> Vec<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    fn labels() -> Vec<String> {
        toks(&["neg", "pos"])
    }

    #[test]
    fn rejects_length_mismatch() {
        let err = SaliencyRecord::new("r", "d", toks(&["a", "b"]), vec![0.1], "pos", "pos", labels());
        assert!(matches!(err, Err(Error::InvalidRecord(_))));
    }

    #[test]
    fn rejects_empty_and_non_finite() {
        assert!(SaliencyRecord::new("r", "d", vec![], vec![], "pos", "pos", labels()).is_err());
        for bad in [f64::NAN, f64::INFINITY, f64::NEG_INFINITY] {
            let r = SaliencyRecord::new("r", "d", toks(&["a"]), vec![bad], "pos", "pos", labels());
            assert!(matches!(r, Err(Error::InvalidRecord(_))));
        }
    }

    #[test]
    fn rejects_unknown_labels() {
        let r = SaliencyRecord::new("r", "d", toks(&["a"]), vec![0.0], "maybe", "pos", labels());
        assert!(r.is_err());
        let r = SaliencyRecord::new("r", "d", toks(&["a"]), vec![0.0], "pos", "maybe", labels());
        assert!(r.is_err());
    }

    #[test]
    fn parses_jsonl_line_ignoring_extra_keys() {
        let line = r#"{"id":"7","dataset":"imdb","tokens":["a","b"],"scores":[0.5,-0.25],
            "predicted_label":"pos","true_label":"neg","label_set":["neg","pos"],"extra":42}"#;
        let rec: SaliencyRecord = serde_json::from_str(line).unwrap();
        assert_eq!(rec.id(), "7");
        assert_eq!(rec.scores(), &[0.5, -0.25]);
        assert!(rec.is_misclassified());

        let bad = r#"{"id":"7","dataset":"imdb","tokens":["a"],"scores":[0.5,1.0],
            "predicted_label":"pos","true_label":"neg","label_set":["neg","pos"]}"#;
        assert!(serde_json::from_str::<SaliencyRecord>(bad).is_err());
    }

    #[test]
    fn selection_from_iter_sorts_and_dedups() {
        let sel: TokenSelection = [3, 1, 3, 2].into_iter().collect();
        assert_eq!(sel.indices(), &[1, 2, 3]);
    }

    #[test]
    fn selection_rejects_unsorted_wire_form() {
        assert!(serde_json::from_str::<TokenSelection>("[2,1]").is_err());
        assert!(serde_json::from_str::<TokenSelection>("[1,1]").is_err());
        let ok: TokenSelection = serde_json::from_str("[0,4]").unwrap();
        assert_eq!(ok.indices(), &[0, 4]);
    }

    #[test]
    fn runs_split_on_gaps() {
        let sel: TokenSelection = [0, 1, 2, 5, 7, 8].into_iter().collect();
        let runs: Vec<Vec<usize>> = sel.runs().into_iter().map(Vec::from).collect();
        assert_eq!(runs, vec![vec![0, 1, 2], vec![5], vec![7, 8]]);
        assert!(TokenSelection::empty().runs().is_empty());
    }

    #[test]
    fn rank_order_breaks_ties_by_index() {
        let rec = SaliencyRecord::new(
            "r",
            "d",
            toks(&["a", "b", "c", "d"]),
            vec![0.5, 0.9, 0.5, -1.0],
            "pos",
            "pos",
            labels(),
        )
        .unwrap();
        assert_eq!(rec.rank_order(), vec![1, 0, 2, 3]);
    }
}
