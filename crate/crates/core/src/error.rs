use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid record: {0}")]
    InvalidRecord(String),

    #[error("invalid token selection: {0}")]
    InvalidSelection(String),

    #[error("attribution mass is zero")]
    ZeroMass,

    #[error("invalid window size {c}: {reason}")]
    InvalidWindow { c: usize, reason: &'static str },

    #[error("window of size {c} does not fit an input of {n} tokens")]
    WindowTooLarge { c: usize, n: usize },

    #[error("candidate selects no tokens")]
    EmptyCandidate,

    #[error("at least 2 scores are needed for a spread estimate, got {n}")]
    DegenerateSample { n: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("no spans to select from")]
    NoSpans,

    #[error("insufficient records: {0}")]
    InsufficientRecords(String),

    #[error("template parse error on line {line}: {message}")]
    TemplateParse { line: usize, message: String },

    #[error("template {id:?} declares arity {declared} but has {found} distinct slots")]
    ArityMismatch { id: String, declared: usize, found: usize },

    #[error("no template of arity {arity} for dataset {dataset:?}")]
    NoTemplateForArity { arity: usize, dataset: String },

    #[error("prompt is for dataset {expected:?}, record is from {found:?}")]
    DatasetMismatch { expected: String, found: String },

    #[error("endpoint rejected credentials (HTTP {status})")]
    Auth { status: u16 },

    #[error("endpoint error: {0}")]
    Endpoint(String),

    #[error("no quoted phrases found in any verbalization")]
    NoMentions,

    #[error("verbalizations do not align with records: missing {missing:?}, unknown {unknown:?}")]
    Alignment {
        missing: Vec<String>,
        unknown: Vec<String>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
