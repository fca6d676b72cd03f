use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::coverage::{coverage, coverage_positive_or_zero};
use crate::error::Result;
use crate::record::{SaliencyRecord, TokenSelection};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerbalizationMethod {
    Template,
    Instructed,
    External,
}

/// A natural-language rendering of one saliency map together with the token
/// positions it cites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verbalization {
    pub record_id: String,
    pub text: String,
    pub mentioned: TokenSelection,
    pub method: VerbalizationMethod,
    pub coverage: f64,
    pub coverage_positive: f64,
    #[serde(default)]
    pub provenance: BTreeMap<String, String>,
}

impl Verbalization {
    /// Builds a verbalization and computes both coverage values from the
    /// record. A map without positive attributions has zero positive
    /// coverage.
    pub fn new(
        record: &SaliencyRecord,
        text: String,
        mentioned: TokenSelection,
        method: VerbalizationMethod,
        provenance: BTreeMap<String, String>,
    ) -> Result<Self> {
        Ok(Verbalization {
            record_id: record.id().to_string(),
            coverage: coverage(record, &mentioned)?,
            coverage_positive: coverage_positive_or_zero(record, &mentioned)?,
            text,
            mentioned,
            method,
            provenance,
        })
    }

    /// True when the stored coverage values match a recomputation within
    /// `1e-12`.
    pub fn coverage_consistent(&self, record: &SaliencyRecord) -> bool {
        let (Ok(cov), Ok(cov_pos)) = (
            coverage(record, &self.mentioned),
            coverage_positive_or_zero(record, &self.mentioned),
        ) else {
            return false;
        };
        (cov - self.coverage).abs() <= 1e-12 && (cov_pos - self.coverage_positive).abs() <= 1e-12
    }
}
