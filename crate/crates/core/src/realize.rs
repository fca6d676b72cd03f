//! Template-based surface realization.
//!
//! Selected spans are quoted verbatim from the input and slotted into a
//! hand-written sentence template. The mention set of the resulting
//! [`Verbalization`] is exactly the union of the rendered spans, so every
//! citation is faithful to the saliency map by construction.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record::{SaliencyRecord, TokenSelection};
use crate::select::MergedSpan;
use crate::verbalization::{Verbalization, VerbalizationMethod};

const BUILTIN_TEMPLATES: &str = include_str!("templates.tsv");

/// At most this many spans are verbalized per instance.
pub const MAX_SPANS: usize = 3;

/// Quote pairs tried in order; the first one absent from every rendered span
/// is used.
pub const QUOTE_STYLES: [(char, char); 5] = [('\'', '\''), ('"', '"'), ('‘', '’'), ('“', '”'), ('«', '»')];

/// Subword markers stripped from the front of a token for display.
const SUBWORD_PREFIXES: [&str; 2] = ["##", "\u{2581}"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateCategory {
    Leading,
    Conjunction,
    Polarity,
    DatasetSpecific,
}

impl TemplateCategory {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "leading" => TemplateCategory::Leading,
            "conjunction" => TemplateCategory::Conjunction,
            "polarity" => TemplateCategory::Polarity,
            "dataset_specific" => TemplateCategory::DatasetSpecific,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub id: String,
    pub pattern: String,
    pub arity: usize,
    pub dataset_tag: Option<String>,
    pub category: TemplateCategory,
}

enum Piece<'a> {
    Text(&'a str),
    Slot(usize),
}

/// Splits a pattern into literal text and `{n}` slots.
fn pieces(pattern: &str) -> Vec<Piece<'_>> {
    let mut out = Vec::new();
    let mut rest = pattern;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        let digits = after.bytes().take_while(u8::is_ascii_digit).count();
        if digits > 0 && after[digits..].starts_with('}') {
            if open > 0 {
                out.push(Piece::Text(&rest[..open]));
            }
            out.push(Piece::Slot(after[..digits].parse().expect("ascii digits")));
            rest = &after[digits + 1..];
        } else {
            out.push(Piece::Text(&rest[..=open]));
            rest = after;
        }
    }
    if !rest.is_empty() {
        out.push(Piece::Text(rest));
    }
    out
}

impl Template {
    /// Validates slot numbering and placement.
    pub fn new(
        id: impl Into<String>,
        pattern: impl Into<String>,
        arity: usize,
        dataset_tag: Option<String>,
        category: TemplateCategory,
    ) -> Result<Self> {
        let id = id.into();
        let pattern = pattern.into();
        let parse_err = |message: String| Error::TemplateParse { line: 0, message };
        if pattern.trim().is_empty() {
            return Err(parse_err(format!("template {id:?} has an empty pattern")));
        }
        let parts = pieces(&pattern);
        let slots: HashSet<usize> = parts
            .iter()
            .filter_map(|p| match p {
                Piece::Slot(i) => Some(*i),
                Piece::Text(_) => None,
            })
            .collect();
        if slots.len() != arity || slots.iter().any(|&i| i >= arity) {
            return Err(Error::ArityMismatch {
                id,
                declared: arity,
                found: slots.len(),
            });
        }
        // Quoted spans must not touch letters or digits, or the quotes could
        // be mistaken for apostrophes when the text is read back.
        for (i, part) in parts.iter().enumerate() {
            if !matches!(part, Piece::Slot(_)) {
                continue;
            }
            let before = i.checked_sub(1).and_then(|j| match &parts[j] {
                Piece::Text(t) => t.chars().next_back(),
                Piece::Slot(_) => Some('x'),
            });
            let after = parts.get(i + 1).and_then(|p| match p {
                Piece::Text(t) => t.chars().next(),
                Piece::Slot(_) => Some('x'),
            });
            if before.is_some_and(char::is_alphanumeric) || after.is_some_and(char::is_alphanumeric) {
                return Err(parse_err(format!(
                    "template {id:?}: slots must be separated from words by spaces or punctuation"
                )));
            }
        }
        Ok(Template {
            id,
            pattern,
            arity,
            dataset_tag,
            category,
        })
    }

    /// Fills slot `{i}` with `args[i]`. Inserted text is never re-scanned.
    pub fn render(&self, args: &[String]) -> String {
        let mut out = String::with_capacity(self.pattern.len() + args.iter().map(String::len).sum::<usize>());
        for piece in pieces(&self.pattern) {
            match piece {
                Piece::Text(t) => out.push_str(t),
                Piece::Slot(i) => out.push_str(&args[i]),
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateBank {
    templates: Vec<Template>,
    rng_seed: u64,
}

impl TemplateBank {
    pub fn new(templates: Vec<Template>, rng_seed: u64) -> Result<Self> {
        let mut ids = HashSet::new();
        for t in &templates {
            if !ids.insert(t.id.as_str()) {
                return Err(Error::TemplateParse {
                    line: 0,
                    message: format!("duplicate template id {:?}", t.id),
                });
            }
        }
        for arity in 1..=MAX_SPANS {
            if !templates.iter().any(|t| t.arity == arity) {
                return Err(Error::NoTemplateForArity {
                    arity,
                    dataset: "*".into(),
                });
            }
        }
        Ok(TemplateBank { templates, rng_seed })
    }

    /// Parses the tab-separated template format:
    /// `id <TAB> arity <TAB> dataset-or-"-" <TAB> pattern [<TAB> category]`.
    /// Blank lines and lines starting with `#` are skipped.
    pub fn parse(text: &str, rng_seed: u64) -> Result<Self> {
        let mut templates = Vec::new();
        let mut ids = HashSet::new();
        for (lineno, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l)) {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| Error::TemplateParse { line: lineno, message };
            let fields: Vec<&str> = line.split('\t').collect();
            if !(4..=5).contains(&fields.len()) {
                return Err(err(format!("expected 4 or 5 tab-separated fields, found {}", fields.len())));
            }
            let id = fields[0].trim();
            if id.is_empty() {
                return Err(err("empty template id".into()));
            }
            if !ids.insert(id.to_string()) {
                return Err(err(format!("duplicate template id {id:?}")));
            }
            let arity: usize = fields[1]
                .trim()
                .parse()
                .map_err(|_| err(format!("invalid arity {:?}", fields[1])))?;
            let dataset_tag = match fields[2].trim() {
                "-" | "" => None,
                tag => Some(tag.to_string()),
            };
            let category = match fields.get(4).map(|s| s.trim()) {
                Some(c) => TemplateCategory::parse(c).ok_or_else(|| err(format!("unknown category {c:?}")))?,
                None if dataset_tag.is_some() => TemplateCategory::DatasetSpecific,
                None if arity == 1 => TemplateCategory::Leading,
                None => TemplateCategory::Conjunction,
            };
            let template = Template::new(id, fields[3], arity, dataset_tag, category).map_err(|e| match e {
                Error::TemplateParse { message, .. } => err(message),
                other => other,
            })?;
            templates.push(template);
        }
        TemplateBank::new(templates, rng_seed)
    }

    pub fn builtin(rng_seed: u64) -> Self {
        TemplateBank::parse(BUILTIN_TEMPLATES, rng_seed).expect("built-in template bank is valid")
    }

    pub fn templates(&self) -> &[Template] {
        &self.templates
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    /// Candidate templates for `arity`, preferring those tagged for
    /// `dataset`.
    pub fn candidates(&self, arity: usize, dataset: &str) -> Vec<&Template> {
        let tagged: Vec<&Template> = self
            .templates
            .iter()
            .filter(|t| t.arity == arity && t.dataset_tag.as_deref().is_some_and(|d| d.eq_ignore_ascii_case(dataset)))
            .collect();
        if !tagged.is_empty() {
            return tagged;
        }
        self.templates
            .iter()
            .filter(|t| t.arity == arity && t.dataset_tag.is_none())
            .collect()
    }
}

/// Loads a bank from `path`, or the built-in bank when `path` is `None`.
pub fn load_bank(path: Option<&Path>, rng_seed: u64) -> Result<TemplateBank> {
    match path {
        None => Ok(TemplateBank::builtin(rng_seed)),
        Some(p) => TemplateBank::parse(&std::fs::read_to_string(p)?, rng_seed),
    }
}

/// Token text as shown to readers: subword markers removed.
pub fn display_token(token: &str) -> &str {
    SUBWORD_PREFIXES
        .iter()
        .find_map(|p| token.strip_prefix(p).filter(|rest| !rest.is_empty()))
        .unwrap_or(token)
}

/// Space-joined display text of the tokens at `sel`.
pub fn surface_text(record: &SaliencyRecord, sel: &TokenSelection) -> String {
    sel.iter()
        .map(|i| display_token(&record.tokens()[i]))
        .collect::<Vec<_>>()
        .join(" ")
}

/// 64-bit FNV-1a; stable across platforms and releases.
fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

fn record_rng(record_id: &str, seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(fnv1a(record_id.as_bytes()) ^ seed.rotate_left(32))
}

/// A style is safe for `text` when its closing mark never appears where a
/// reader would take it as the end of the quote.
fn quote_safe(text: &str, close: char) -> bool {
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        if c == close && chars.peek().is_none_or(|n| !n.is_alphanumeric()) {
            return false;
        }
    }
    true
}

/// One shared style when possible, otherwise the first safe style per text.
fn pick_quotes(texts: &[String]) -> Vec<(char, char)> {
    let safe_for = |t: &String| {
        QUOTE_STYLES
            .iter()
            .copied()
            .find(|&(open, close)| !t.contains(open) && !t.contains(close))
            .or_else(|| QUOTE_STYLES.iter().copied().find(|&(_, close)| quote_safe(t, close)))
            .unwrap_or(QUOTE_STYLES[0])
    };
    let shared = QUOTE_STYLES
        .iter()
        .copied()
        .find(|&(open, close)| texts.iter().all(|t| !t.contains(open) && !t.contains(close)));
    match shared {
        Some(style) => vec![style; texts.len()],
        None => texts.iter().map(safe_for).collect(),
    }
}

/// Renders up to [`MAX_SPANS`] spans into a template sentence.
///
/// Spans are ordered by positive coverage (best first); extras are dropped
/// from the low end. The template is drawn from the bank with a generator
/// seeded by the record id and `seed`.
pub fn realize(
    spans: &[MergedSpan],
    record: &SaliencyRecord,
    bank: &TemplateBank,
    seed: u64,
) -> Result<Verbalization> {
    if spans.is_empty() {
        return Err(Error::NoSpans);
    }
    let mut ordered: Vec<&MergedSpan> = spans.iter().collect();
    ordered.sort_by(|a, b| {
        b.coverage_positive
            .total_cmp(&a.coverage_positive)
            .then_with(|| a.indices.cmp(&b.indices))
    });
    ordered.truncate(MAX_SPANS);
    for span in &ordered {
        span.indices.check_bounds(record)?;
    }

    let arity = ordered.len();
    let candidates = bank.candidates(arity, record.dataset());
    if candidates.is_empty() {
        return Err(Error::NoTemplateForArity {
            arity,
            dataset: record.dataset().to_string(),
        });
    }
    let mut rng = record_rng(record.id(), seed);
    let template = candidates[rng.random_range(0..candidates.len())];

    let texts: Vec<String> = ordered.iter().map(|s| surface_text(record, &s.indices)).collect();
    let quoted: Vec<String> = texts
        .iter()
        .zip(pick_quotes(&texts))
        .map(|(t, (open, close))| format!("{open}{t}{close}"))
        .collect();
    let text = template.render(&quoted);

    let mentioned = ordered
        .iter()
        .fold(TokenSelection::empty(), |acc, s| acc.union(&s.indices));
    let provenance = BTreeMap::from([
        ("template".to_string(), template.id.clone()),
        ("seed".to_string(), seed.to_string()),
    ]);
    Verbalization::new(record, text, mentioned, VerbalizationMethod::Template, provenance)
}
