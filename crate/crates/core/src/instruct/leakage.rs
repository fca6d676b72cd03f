use std::collections::BTreeMap;

use regex::Regex;

use crate::error::{Error, Result};

pub const DEFAULT_PLACEHOLDER: &str = "{placeholder}";

/// Phrases that give away each label, beyond the label string itself.
const BUILTIN_PHRASES: &[(&str, &[&str])] = &[
    ("positive", &["positivity"]),
    ("negative", &["negativity"]),
    ("sports", &["sport", "the world of sports"]),
    (
        "business",
        &[
            "businesses",
            "business and economics",
            "business and finance",
            "economics",
            "finance",
            "financial",
            "the business world",
            "the economy",
            "corporate finance",
        ],
    ),
    (
        "world",
        &[
            "global",
            "global politics",
            "international",
            "all over the world",
            "global issues",
            "global affairs",
            "international relations",
            "a global issue or event",
        ],
    ),
    (
        "sci/tech",
        &[
            "science",
            "science and technology",
            "scientific",
            "tech",
            "technical",
            "technology",
            "technological",
            "the tech industry",
            "the technology industry",
        ],
    ),
];

/// Per-label lists of forbidden phrases, replaced by a placeholder in
/// generated explanations.
#[derive(Debug, Clone)]
pub struct LeakageTable {
    phrases: BTreeMap<String, Vec<String>>,
    placeholder: String,
    compiled: BTreeMap<String, Regex>,
}

fn label_key(label: &str) -> String {
    label.trim().to_lowercase()
}

impl Default for LeakageTable {
    fn default() -> Self {
        LeakageTable::builtin()
    }
}

impl LeakageTable {
    pub fn empty(placeholder: impl Into<String>) -> Self {
        LeakageTable {
            phrases: BTreeMap::new(),
            placeholder: placeholder.into(),
            compiled: BTreeMap::new(),
        }
    }

    pub fn builtin() -> Self {
        let mut table = LeakageTable::empty(DEFAULT_PLACEHOLDER);
        for (label, phrases) in BUILTIN_PHRASES {
            for phrase in *phrases {
                table.add(label, phrase).expect("built-in phrases are valid");
            }
        }
        table
    }

    /// Adds `phrase` for `label`; stored lowercase, deduplicated, longest
    /// first.
    pub fn add(&mut self, label: &str, phrase: &str) -> Result<()> {
        let phrase = phrase.trim().to_lowercase();
        if phrase.is_empty() {
            return Err(Error::InvalidConfig(format!("empty leakage phrase for label {label:?}")));
        }
        let key = label_key(label);
        let list = self.phrases.entry(key.clone()).or_default();
        if !list.contains(&phrase) {
            list.push(phrase);
            list.sort_by(|a, b| b.chars().count().cmp(&a.chars().count()).then_with(|| a.cmp(b)));
            let re = self.build_matcher(&key).expect("label has phrases");
            self.compiled.insert(key, re);
        }
        Ok(())
    }

    /// Extends the table from `label <TAB> phrase` lines. Blank lines and
    /// `#` comments are skipped.
    pub fn extend_from_tsv(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (label, phrase) = line.split_once('\t').ok_or_else(|| {
                Error::InvalidConfig(format!("leakage table line {}: expected label<TAB>phrase", lineno + 1))
            })?;
            self.add(label, phrase)?;
        }
        Ok(())
    }

    pub fn placeholder(&self) -> &str {
        &self.placeholder
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.phrases.keys().map(String::as_str)
    }

    /// The label itself plus its table phrases, longest first.
    pub fn forbidden(&self, label: &str) -> Vec<String> {
        let mut all: Vec<String> = self.phrases.get(&label_key(label)).cloned().unwrap_or_default();
        let own = label_key(label);
        if !own.is_empty() && !all.contains(&own) {
            all.push(own);
        }
        all.sort_by(|a, b| b.chars().count().cmp(&a.chars().count()).then_with(|| a.cmp(b)));
        all
    }

    fn matcher(&self, label: &str) -> Option<std::borrow::Cow<'_, Regex>> {
        match self.compiled.get(&label_key(label)) {
            Some(re) => Some(std::borrow::Cow::Borrowed(re)),
            None => self.build_matcher(label).map(std::borrow::Cow::Owned),
        }
    }

    fn build_matcher(&self, label: &str) -> Option<Regex> {
        let forbidden = self.forbidden(label);
        if forbidden.is_empty() {
            return None;
        }
        let word = |c: Option<char>| c.is_some_and(|c| c.is_alphanumeric() || c == '_');
        let alternatives: Vec<String> = forbidden
            .iter()
            .map(|p| {
                let lead = if word(p.chars().next()) { r"\b" } else { "" };
                let tail = if word(p.chars().next_back()) { r"\b" } else { "" };
                format!("{lead}{}{tail}", regex::escape(p))
            })
            .collect();
        Some(Regex::new(&format!("(?i)(?:{})", alternatives.join("|"))).expect("escaped phrases form a valid regex"))
    }
}

/// Replaces the predicted label and every table phrase for it with the
/// table's placeholder: case-insensitive, whole words, longest phrase first.
/// Applying it twice gives the same text as applying it once.
pub fn postprocess_label_leakage(text: &str, predicted_label: &str, table: &LeakageTable) -> String {
    match table.matcher(predicted_label) {
        Some(re) => re.replace_all(text, regex::NoExpand(table.placeholder())).into_owned(),
        None => text.to_string(),
    }
}
