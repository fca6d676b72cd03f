//! Saliency map verbalization.
//!
//! Turns token-level attribution scores into short natural-language
//! explanations, either model-free (binary-filter search, threshold scoring,
//! span selection and sentence templates) or by instructing a chat model,
//! and measures how faithfully any such explanation cites the saliency map.
//!
//! ```
//! use smv_core::{realize, SaliencyRecord, SelectConfig, ScoringConfig, Summarizer, TemplateBank};
//!
//! let record = SaliencyRecord::new(
//!     "1",
//!     "imdb",
//!     ["a", "truly", "awful", "film"].map(String::from).to_vec(),
//!     vec![0.01, 0.2, 0.9, 0.05],
//!     "negative",
//!     "negative",
//!     vec!["negative".into(), "positive".into()],
//! )?;
//! let summarizer = Summarizer::new(SelectConfig::default(), ScoringConfig::default(), 5, 5)?;
//! let spans = summarizer.summarize(&record)?;
//! let verbalization = realize(&spans, &record, &TemplateBank::builtin(0), 0)?;
//! assert!(verbalization.text.contains("awful"));
//! # Ok::<(), smv_core::Error>(())
//! ```

pub mod coverage;
pub mod error;
pub mod eval;
pub mod instruct;
pub mod parallel;
pub mod realize;
pub mod record;
pub mod scoring;
pub mod search;
pub mod select;
pub mod stats;
pub mod verbalization;

pub use coverage::{attribution_mass, coverage, coverage_positive, coverage_positive_or_zero, top_k_indices, Polarity};
pub use error::{Error, Result};
pub use realize::{load_bank, realize, TemplateBank};
pub use record::{SaliencyRecord, TokenSelection};
pub use scoring::{ScoringConfig, ScoringMetric};
pub use select::{summarize, MergedSpan, SelectConfig, Summarizer};
pub use verbalization::{Verbalization, VerbalizationMethod};

/// Summarizes and realizes one record.
pub fn verbalize(record: &SaliencyRecord, summarizer: &Summarizer, bank: &TemplateBank) -> Result<Verbalization> {
    let spans = summarizer.summarize(record)?;
    realize(&spans, record, bank, bank.rng_seed())
}

/// [`verbalize`] over a batch, record-parallel when the `parallel` feature
/// is on. Results follow input order.
pub fn verbalize_batch(
    records: &[SaliencyRecord],
    summarizer: &Summarizer,
    bank: &TemplateBank,
) -> Vec<Result<Verbalization>> {
    parallel::map(records, |r| verbalize(r, summarizer, bank))
}
