//! Instruction-based verbalization: prompt construction, the chat endpoint
//! client, and label-leakage scrubbing of the returned text.

mod client;
mod leakage;
mod prompt;

use std::collections::BTreeMap;

pub use client::{
    request_verbalization, ChatClient, ChatEndpointConfig, ChatTransport, HttpReply, ResponseCache,
    TransportError, UreqTransport, API_KEY_ENV,
};
pub use leakage::{postprocess_label_leakage, LeakageTable, DEFAULT_PLACEHOLDER};
pub use prompt::{
    build_instruction, format_score, format_scored_text, parse_scored_text, PromptSpec, LABEL_SLOT, SAMPLE_SLOT,
};

use crate::error::Result;
use crate::eval::{extract_mentions, MatchMode};
use crate::record::SaliencyRecord;
use crate::verbalization::{Verbalization, VerbalizationMethod};

/// Turns a raw model answer into a [`Verbalization`]: scrubs label leakage,
/// then recovers the cited tokens from quoted phrases.
pub fn finish_instructed(
    record: &SaliencyRecord,
    raw_text: &str,
    table: &LeakageTable,
    model: &str,
) -> Result<Verbalization> {
    let text = postprocess_label_leakage(raw_text, record.predicted_label(), table);
    let mentions = extract_mentions(&text, record, MatchMode::QuotedOnly);
    let provenance = BTreeMap::from([
        ("model".to_string(), model.to_string()),
        ("unmatched_phrases".to_string(), mentions.unmatched_phrases.len().to_string()),
    ]);
    Verbalization::new(record, text, mentions.mentioned, VerbalizationMethod::Instructed, provenance)
}
