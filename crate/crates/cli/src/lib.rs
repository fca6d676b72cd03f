//! The `smv` command line: streaming JSONL front end to `smv_core`.

pub mod config;
pub mod heatmap;
pub mod io;
pub mod sheet;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use log::{error, info, warn};
use serde::Serialize;
use serde_json::Value;
use smv_core::eval::{evaluate, extract_mentions, MatchMode};
use smv_core::instruct::{
    build_instruction, finish_instructed, ChatClient, LeakageTable, PromptSpec, ResponseCache, UreqTransport,
};
use smv_core::scoring::ScoredCandidate;
use smv_core::select::subset_filter;
use smv_core::{load_bank, parallel, realize, MergedSpan, SaliencyRecord, Summarizer, TemplateBank, Verbalization};

use crate::config::{Overrides, Preset, RunConfig};
use crate::io::{open_input, open_output, parse_line, read_all, write_json_line, Chunks, Line};

#[derive(Debug, Parser)]
#[command(name = "smv", version, about = "Verbalize saliency maps and evaluate the verbalizations")]
pub struct Cli {
    /// Flat TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub preset: Option<Preset>,
    /// Worker threads (default: all logical processors).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Quoted,
    ContentWords,
}

impl From<Mode> for MatchMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Quoted => MatchMode::QuotedOnly,
            Mode::ContentWords => MatchMode::AllContentWords,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Template verbalizations, one JSON object per record.
    Verbalize {
        input: PathBuf,
        #[arg(short, long, default_value = "-")]
        output: PathBuf,
        /// Also write scored candidates and selected spans per record.
        #[arg(long)]
        dump_candidates: Option<PathBuf>,
    },
    /// Instruction prompts only, without calling any endpoint.
    Prompt {
        input: PathBuf,
        #[arg(short, long, default_value = "-")]
        output: PathBuf,
        /// Instruction template with `{sample}` and `{label_str}` slots.
        #[arg(long)]
        instruction: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        decimals: usize,
    },
    /// Verbalizations from a chat-completion endpoint (key in SMV_API_KEY).
    Instruct {
        input: PathBuf,
        #[arg(short, long, default_value = "-")]
        output: PathBuf,
        #[arg(long)]
        instruction: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        decimals: usize,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
    },
    /// Faithfulness report for verbalizations of a record corpus.
    Eval {
        records: PathBuf,
        verbalizations: PathBuf,
        #[arg(long, default_value_t = 10)]
        max_k: usize,
        /// Receives report.json and coverage.csv.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        #[arg(long, value_enum, default_value = "quoted")]
        match_mode: Mode,
    },
    /// Subset of records suited for evaluation.
    Select {
        input: PathBuf,
        #[arg(short, long, default_value = "-")]
        output: PathBuf,
    },
    /// One HTML heatmap per record.
    RenderHeatmap { input: PathBuf, out_dir: PathBuf },
    /// Annotation sheet over several verbalization methods.
    ExportSheet {
        records: PathBuf,
        /// `METHOD=PATH`, repeatable.
        #[arg(long = "verbs", value_parser = parse_method, required = true)]
        verbs: Vec<(String, PathBuf)>,
        #[arg(short, long, default_value = "-")]
        output: PathBuf,
    },
}

fn parse_method(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((m, p)) if !m.is_empty() && !p.is_empty() => Ok((m.to_string(), PathBuf::from(p))),
        _ => Err(format!("expected METHOD=PATH, got {s:?}")),
    }
}

/// Configuration or invocation problem; reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub anyhow::Error);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage<T>(r: anyhow::Result<T>) -> anyhow::Result<T> {
    r.map_err(|e| anyhow::Error::new(UsageError(e)))
}

/// Records that failed and were skipped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Outcome {
    pub failures: usize,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        if self.failures == 0 {
            0
        } else {
            1
        }
    }
}

/// Exit code for an error returned by [`run`].
pub fn error_exit_code(e: &anyhow::Error) -> i32 {
    if e.downcast_ref::<UsageError>().is_some() {
        2
    } else {
        1
    }
}

pub fn run(cli: Cli) -> anyhow::Result<Outcome> {
    let overrides = Overrides {
        preset: cli.preset,
        seed: cli.seed,
    };
    let cfg = usage(RunConfig::resolve(cli.config.as_deref(), &overrides))?;
    configure_jobs(cli.jobs)?;
    match cli.command {
        Command::Verbalize {
            input,
            output,
            dump_candidates,
        } => cmd_verbalize(&cfg, &input, &output, dump_candidates.as_deref()),
        Command::Prompt {
            input,
            output,
            instruction,
            decimals,
        } => cmd_prompt(&input, &output, instruction.as_deref(), decimals, &cfg),
        Command::Instruct {
            input,
            output,
            instruction,
            decimals,
            cache_dir,
        } => cmd_instruct(&cfg, &input, &output, instruction.as_deref(), decimals, cache_dir),
        Command::Eval {
            records,
            verbalizations,
            max_k,
            out_dir,
            match_mode,
        } => cmd_eval(&records, &verbalizations, max_k, &out_dir, match_mode.into()),
        Command::Select { input, output } => cmd_select(&cfg, &input, &output),
        Command::RenderHeatmap { input, out_dir } => cmd_render_heatmap(&cfg, &input, &out_dir),
        Command::ExportSheet { records, verbs, output } => cmd_export_sheet(&cfg, &records, &verbs, &output),
    }
}

fn configure_jobs(jobs: Option<usize>) -> anyhow::Result<()> {
    let Some(n) = jobs else { return Ok(()) };
    if n == 0 {
        return usage(Err(anyhow!("--jobs must be positive")));
    }
    #[cfg(feature = "parallel")]
    {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            warn!("worker pool already configured: {e}");
        }
    }
    #[cfg(not(feature = "parallel"))]
    if n > 1 {
        warn!("built without the parallel feature; --jobs {n} ignored");
    }
    Ok(())
}

/// Streams `input` in chunks, maps each line with `f` on the worker pool and
/// writes results in input order. Failing lines are logged and counted.
fn stream<T, F>(input: &Path, chunk_size: usize, f: F, mut sink: impl FnMut(T) -> anyhow::Result<()>) -> anyhow::Result<Outcome>
where
    T: Send,
    F: Fn(&Line) -> Result<T, String> + Sync + Send,
{
    let mut chunks = Chunks::new(usage(open_input(input))?, chunk_size);
    let mut outcome = Outcome::default();
    while let Some(chunk) = chunks.next_chunk() {
        let chunk = chunk.with_context(|| format!("reading {}", input.display()))?;
        for result in parallel::map(&chunk, &f) {
            match result {
                Ok(value) => sink(value)?,
                Err(msg) => {
                    error!("{}: {msg}", input.display());
                    outcome.failures += 1;
                }
            }
        }
    }
    Ok(outcome)
}

fn parse_record(line: &Line) -> Result<SaliencyRecord, String> {
    parse_line(line)
}

#[derive(Serialize)]
struct CandidateDump<'a> {
    record_id: &'a str,
    convolution: Vec<ScoredCandidate>,
    span: Vec<ScoredCandidate>,
    selected: &'a [MergedSpan],
}

fn cmd_verbalize(cfg: &RunConfig, input: &Path, output: &Path, dump: Option<&Path>) -> anyhow::Result<Outcome> {
    let summarizer = usage(Summarizer::new(cfg.select(), cfg.scoring(), cfg.c_conv, cfg.c_span).map_err(Into::into))?;
    let bank: TemplateBank = usage(load_bank(cfg.template_bank.as_deref(), cfg.seed).map_err(Into::into))?;
    let mut out = usage(open_output(output))?;
    let mut dump_out = match dump {
        Some(p) => Some(usage(open_output(p))?),
        None => None,
    };
    let want_dump = dump_out.is_some();
    let work = |line: &Line| -> Result<(Verbalization, Option<String>), String> {
        let record = parse_record(line)?;
        let fail = |e: smv_core::Error| format!("line {} ({}): {e}", line.number, record.id());
        let spans = summarizer.summarize(&record).map_err(fail)?;
        let verb = realize(&spans, &record, &bank, bank.rng_seed()).map_err(fail)?;
        let dumped = if want_dump {
            let (convolution, span) = summarizer.scored_candidates(&record).map_err(fail)?;
            let d = CandidateDump {
                record_id: record.id(),
                convolution,
                span,
                selected: &spans,
            };
            Some(serde_json::to_string(&d).map_err(|e| e.to_string())?)
        } else {
            None
        };
        Ok((verb, dumped))
    };
    let outcome = stream(input, cfg.chunk_size, work, |(verb, dumped)| {
        write_json_line(&mut out, &verb)?;
        if let (Some(d), Some(text)) = (dump_out.as_mut(), dumped) {
            writeln!(d, "{text}")?;
        }
        Ok(())
    })?;
    out.flush()?;
    if let Some(d) = dump_out.as_mut() {
        d.flush()?;
    }
    Ok(outcome)
}

/// Prompt builder shared by `prompt` and `instruct`.
struct Prompter {
    custom: Option<String>,
    decimals: usize,
}

impl Prompter {
    fn new(instruction: Option<&Path>, decimals: usize) -> anyhow::Result<Self> {
        let custom = match instruction {
            Some(p) => Some(std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?),
            None => None,
        };
        PromptSpec::new("check", custom.clone().unwrap_or_else(|| "{sample} {label_str}".into()), decimals)?;
        Ok(Prompter { custom, decimals })
    }

    fn prompt(&self, record: &SaliencyRecord) -> Result<String, String> {
        let spec = match &self.custom {
            Some(t) => PromptSpec::new(record.dataset(), t.clone(), self.decimals),
            None => {
                let builtin = PromptSpec::builtin(record.dataset())
                    .ok_or_else(|| format!("no built-in instruction for dataset {:?}", record.dataset()))?;
                PromptSpec::new(builtin.dataset, builtin.instruction_template, self.decimals)
            }
        }
        .map_err(|e| e.to_string())?;
        build_instruction(record, &spec).map_err(|e| e.to_string())
    }
}

#[derive(Serialize)]
struct PromptLine {
    record_id: String,
    prompt: String,
}

fn cmd_prompt(
    input: &Path,
    output: &Path,
    instruction: Option<&Path>,
    decimals: usize,
    cfg: &RunConfig,
) -> anyhow::Result<Outcome> {
    let prompter = usage(Prompter::new(instruction, decimals))?;
    let mut out = usage(open_output(output))?;
    let work = |line: &Line| {
        let record = parse_record(line)?;
        let prompt = prompter.prompt(&record).map_err(|e| format!("line {}: {e}", line.number))?;
        Ok(PromptLine {
            record_id: record.id().to_string(),
            prompt,
        })
    };
    let outcome = stream(input, cfg.chunk_size, work, |p| write_json_line(&mut out, &p))?;
    out.flush()?;
    Ok(outcome)
}

fn leakage_table(cfg: &RunConfig) -> anyhow::Result<LeakageTable> {
    let mut table = LeakageTable::builtin();
    if let Some(p) = &cfg.leakage_table {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        table.extend_from_tsv(&text)?;
    }
    Ok(table)
}

fn cmd_instruct(
    cfg: &RunConfig,
    input: &Path,
    output: &Path,
    instruction: Option<&Path>,
    decimals: usize,
    cache_dir: Option<PathBuf>,
) -> anyhow::Result<Outcome> {
    let prompter = usage(Prompter::new(instruction, decimals))?;
    let table = usage(leakage_table(cfg))?;
    let endpoint = cfg.endpoint();
    let model = endpoint.model.clone();
    let mut client = usage(ChatClient::from_env(UreqTransport::new(endpoint.timeout), endpoint).map_err(Into::into))?;
    if let Some(dir) = cache_dir.or_else(|| cfg.cache_dir.clone()) {
        client = client.with_cache(usage(ResponseCache::new(dir).map_err(Into::into))?);
    }
    let mut out = usage(open_output(output))?;
    let mut chunks = Chunks::new(usage(open_input(input))?, cfg.chunk_size);
    let mut outcome = Outcome::default();
    while let Some(chunk) = chunks.next_chunk() {
        let chunk = chunk.with_context(|| format!("reading {}", input.display()))?;
        let mut ready = Vec::new();
        for line in &chunk {
            match parse_record(line).and_then(|r| prompter.prompt(&r).map(|p| (r, p))) {
                Ok(pair) => ready.push((line.number, pair)),
                Err(e) => {
                    error!("{}: line {}: {e}", input.display(), line.number);
                    outcome.failures += 1;
                }
            }
        }
        let requests: Vec<(String, String)> =
            ready.iter().map(|(_, (r, p))| (r.id().to_string(), p.clone())).collect();
        for ((number, (record, _)), reply) in ready.iter().zip(client.complete_batch(&requests)) {
            match reply.and_then(|text| finish_instructed(record, &text, &table, &model)) {
                Ok(verb) => write_json_line(&mut out, &verb)?,
                Err(e) => {
                    error!("{}: line {number} ({}): {e}", input.display(), record.id());
                    outcome.failures += 1;
                }
            }
        }
        out.flush()?;
    }
    info!("{} endpoint calls", client.transport_calls());
    Ok(outcome)
}

/// Accepts full verbalization objects, or `{record_id | id, text}` pairs
/// whose mentions are recovered from the text.
fn lenient_verbalization(
    value: Value,
    records: &HashMap<&str, &SaliencyRecord>,
    mode: MatchMode,
) -> anyhow::Result<Verbalization> {
    if let Ok(v) = serde_json::from_value::<Verbalization>(value.clone()) {
        return Ok(v);
    }
    let id = value
        .get("record_id")
        .or_else(|| value.get("id"))
        .and_then(Value::as_str)
        .ok_or_else(|| anyhow!("missing record_id"))?;
    let text = value.get("text").and_then(Value::as_str).ok_or_else(|| anyhow!("missing text"))?;
    let record = records.get(id).ok_or_else(|| anyhow!("unknown record id {id:?}"))?;
    let mentions = extract_mentions(text, record, mode);
    Ok(Verbalization::new(
        record,
        text.to_string(),
        mentions.mentioned,
        smv_core::VerbalizationMethod::External,
        BTreeMap::new(),
    )?)
}

fn read_verbalizations(path: &Path, records: &[SaliencyRecord], mode: MatchMode) -> anyhow::Result<Vec<Verbalization>> {
    let by_id: HashMap<&str, &SaliencyRecord> = records.iter().map(|r| (r.id(), r)).collect();
    let mut chunks = Chunks::new(open_input(path)?, 4096);
    let mut out = Vec::new();
    while let Some(chunk) = chunks.next_chunk() {
        for line in chunk? {
            let value: Value = parse_line(&line).map_err(|e| anyhow!("{}: {e}", path.display()))?;
            out.push(
                lenient_verbalization(value, &by_id, mode)
                    .with_context(|| format!("{}: line {}", path.display(), line.number))?,
            );
        }
    }
    Ok(out)
}

fn cmd_eval(records: &Path, verbs: &Path, max_k: usize, out_dir: &Path, mode: MatchMode) -> anyhow::Result<Outcome> {
    if max_k == 0 {
        return usage(Err(anyhow!("--max-k must be positive")));
    }
    let records: Vec<SaliencyRecord> = usage(read_all(records))?;
    let verbs = usage(read_verbalizations(verbs, &records, mode))?;
    let report = evaluate(&records, &verbs, max_k, mode)?;
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let report_path = out_dir.join("report.json");
    std::fs::write(&report_path, serde_json::to_string_pretty(&report)? + "\n")
        .with_context(|| format!("writing {}", report_path.display()))?;
    let csv_path = out_dir.join("coverage.csv");
    std::fs::write(&csv_path, report.coverage_csv()).with_context(|| format!("writing {}", csv_path.display()))?;
    print!("{}", report.text_table());
    for id in &report.coverage_mismatches {
        warn!("stored coverage of {id} differs from the record");
    }
    Ok(Outcome {
        failures: report.coverage_mismatches.len(),
    })
}

fn cmd_select(cfg: &RunConfig, input: &Path, output: &Path) -> anyhow::Result<Outcome> {
    let records: Vec<SaliencyRecord> = usage(read_all(input))?;
    let kept = subset_filter(&records, &cfg.heuristics())?;
    let mut out = usage(open_output(output))?;
    for r in &kept {
        write_json_line(&mut out, r)?;
    }
    out.flush()?;
    info!("kept {} of {} records", kept.len(), records.len());
    Ok(Outcome::default())
}

fn cmd_render_heatmap(cfg: &RunConfig, input: &Path, out_dir: &Path) -> anyhow::Result<Outcome> {
    usage(std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display())))?;
    let work = |line: &Line| {
        let record = parse_record(line)?;
        let path = out_dir.join(heatmap::file_name(record.id()));
        std::fs::write(&path, heatmap::render(&record)).map_err(|e| format!("{}: {e}", path.display()))
    };
    stream(input, cfg.chunk_size, work, |()| Ok(()))
}

fn cmd_export_sheet(
    cfg: &RunConfig,
    records: &Path,
    verbs: &[(String, PathBuf)],
    output: &Path,
) -> anyhow::Result<Outcome> {
    let records: Vec<SaliencyRecord> = usage(read_all(records))?;
    let mut methods: BTreeMap<String, BTreeMap<String, Verbalization>> = BTreeMap::new();
    for (method, path) in verbs {
        if methods.contains_key(method) {
            return usage(Err(anyhow!("method {method:?} given twice")));
        }
        let list = usage(read_verbalizations(path, &records, MatchMode::QuotedOnly))?;
        methods.insert(method.clone(), list.into_iter().map(|v| (v.record_id.clone(), v)).collect());
    }
    sheet::write_sheet(usage(open_output(output))?, &records, &methods, cfg.seed)?;
    Ok(Outcome::default())
}
