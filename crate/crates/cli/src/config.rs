//! Run configuration: preset defaults, then a flat TOML file, then flags.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use smv_core::instruct::ChatEndpointConfig;
use smv_core::select::{Balance, SubsetHeuristics};
use smv_core::{ScoringConfig, ScoringMetric, SelectConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Preset {
    Imdb,
    AgNews,
}

impl Preset {
    fn table(self) -> toml::Table {
        let text = match self {
            Preset::Imdb => {
                r#"
                metric = "weighted_average"
                beta_fraction = 0.4
                q = 0.75
                k = 5
                balance_labels = true
                error_rate = 0.25
                "#
            }
            Preset::AgNews => {
                r#"
                metric = "quantile"
                sigma_multiplier = 3.0
                q = 0.75
                k = 5
                balance_labels = true
                error_rate = 0.4667
                "#
            }
        };
        text.parse().expect("preset tables are valid TOML")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Option<Preset>,
    pub seed: u64,

    pub metric: ScoringMetric,
    pub beta_fraction: f64,
    pub sigma_multiplier: f64,
    pub beta_threshold: Option<f64>,
    pub k: usize,
    pub q: f64,
    pub max_final: Option<usize>,
    pub c_conv: usize,
    pub c_span: usize,
    pub template_bank: Option<PathBuf>,

    pub min_cov_pos_topk: f64,
    pub max_record_tokens: usize,
    pub balance_labels: bool,
    pub error_rate: Option<f64>,
    pub balance_target: Option<usize>,

    pub base_url: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub concurrency: usize,
    pub cache_dir: Option<PathBuf>,
    pub leakage_table: Option<PathBuf>,

    /// Records read and processed per batch.
    pub chunk_size: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let scoring = ScoringConfig::default();
        let select = SelectConfig::default();
        let heuristics = SubsetHeuristics::default();
        let endpoint = ChatEndpointConfig::default();
        RunConfig {
            preset: None,
            seed: 0,
            metric: scoring.metric,
            beta_fraction: scoring.beta_fraction,
            sigma_multiplier: scoring.sigma_multiplier,
            beta_threshold: scoring.beta_threshold,
            k: select.k,
            q: select.q,
            max_final: select.max_final,
            c_conv: 5,
            c_span: 5,
            template_bank: None,
            min_cov_pos_topk: heuristics.min_cov_pos_topk,
            max_record_tokens: heuristics.max_tokens,
            balance_labels: false,
            error_rate: None,
            balance_target: None,
            base_url: endpoint.base_url,
            model: endpoint.model,
            temperature: endpoint.temperature,
            max_tokens: endpoint.max_tokens,
            timeout_secs: endpoint.timeout.as_secs(),
            max_retries: endpoint.max_retries,
            concurrency: endpoint.concurrency,
            cache_dir: None,
            leakage_table: None,
            chunk_size: 1024,
        }
    }
}

/// Values given on the command line; they win over file and preset.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub preset: Option<Preset>,
    pub seed: Option<u64>,
}

impl RunConfig {
    /// Layers preset defaults, then `file`, then `overrides`. The preset may
    /// come from the file or from the flags; the flag wins.
    pub fn resolve(file: Option<&Path>, overrides: &Overrides) -> anyhow::Result<Self> {
        let file_table: toml::Table = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                text.parse().with_context(|| format!("parsing {}", path.display()))?
            }
            None => toml::Table::new(),
        };
        let file_preset = match file_table.get("preset") {
            Some(v) => Some(
                Preset::deserialize(v.clone()).with_context(|| format!("unknown preset {v} in config file"))?,
            ),
            None => None,
        };
        let preset = overrides.preset.or(file_preset);

        let mut merged = preset.map(Preset::table).unwrap_or_default();
        merged.extend(file_table);
        if let Some(p) = preset {
            merged.insert("preset".into(), toml::Value::try_from(p)?);
        }
        if let Some(seed) = overrides.seed {
            let seed = i64::try_from(seed).context("--seed must fit in a signed 64-bit integer")?;
            merged.insert("seed".into(), toml::Value::Integer(seed));
        }
        let cfg: RunConfig = merged.try_into().context("invalid configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.scoring().validate()?;
        self.select().validate()?;
        if self.chunk_size == 0 {
            bail!("chunk_size must be positive");
        }
        if self.concurrency == 0 {
            bail!("concurrency must be positive");
        }
        Ok(())
    }

    pub fn scoring(&self) -> ScoringConfig {
        ScoringConfig {
            metric: self.metric,
            beta_fraction: self.beta_fraction,
            sigma_multiplier: self.sigma_multiplier,
            beta_threshold: self.beta_threshold,
            notes: String::new(),
        }
    }

    pub fn select(&self) -> SelectConfig {
        SelectConfig {
            k: self.k,
            q: self.q,
            max_final: self.max_final,
        }
    }

    pub fn heuristics(&self) -> SubsetHeuristics {
        SubsetHeuristics {
            min_cov_pos_topk: self.min_cov_pos_topk,
            max_tokens: self.max_record_tokens,
            k: self.k,
            balance: Balance {
                labels: self.balance_labels,
                error_rate: self.error_rate,
                target: self.balance_target,
            },
        }
    }

    pub fn endpoint(&self) -> ChatEndpointConfig {
        ChatEndpointConfig {
            base_url: self.base_url.clone(),
            model: self.model.clone(),
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            timeout: Duration::from_secs(self.timeout_secs),
            max_retries: self.max_retries,
            concurrency: self.concurrency,
            ..ChatEndpointConfig::default()
        }
    }
}
