//! Corpus ingestion into a snippet store, shuffled streams, labeled-set
//! persistence, resumable distillation runs, and corpus filtering.
//!
//! A store is a directory holding `snippets.jsonl` (one snippet per line)
//! and `index.jsonl` (id and byte span of each line). Ingestion appends the
//! data line first and the index line second, so a crash leaves at most an
//! unindexed data tail, which the next open cuts off.

use std::collections::{HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::distiller::{
    run_distillation, CiUpdate, DistillConfig, DistillError, DistillObserver, LabeledRecord,
    LabeledSet, MetricsEvent, RunControl, RunStatus,
};
use crate::jsonl::{load_jsonl, JsonlError, JsonlWriter};
use crate::oracle::{Oracle, OracleResponse, Result as OracleResult, RoundCost};
use crate::scorer::{
    FeatureSpace, LinearScorerFactory, ScorerError, ScorerFactory, ScorerParams, TrainConfig,
};
use crate::snippet::{sha256_hex, Snippet, SnippetId, StreamItem};

pub const DEFAULT_CHUNK_TOKENS: usize = 1024;
pub const DATA_FILE: &str = "snippets.jsonl";
pub const INDEX_FILE: &str = "index.jsonl";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("snippet store {0} is empty")]
    EmptyStore(String),
    #[error("snippet store {path} is inconsistent: {message}")]
    StoreCorrupt { path: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error(transparent)]
    Scorer(#[from] ScorerError),
    #[error(transparent)]
    Distill(#[from] DistillError),
    #[error("resume state disagrees with this run: {0}")]
    ResumeMismatch(String),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// How token counts are approximated when chunking documents.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tokenizer {
    /// Whitespace-separated words.
    #[default]
    Whitespace,
    /// Four characters per token.
    Chars4,
}

impl std::str::FromStr for Tokenizer {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "whitespace" => Ok(Tokenizer::Whitespace),
            "chars4" => Ok(Tokenizer::Chars4),
            other => Err(PipelineError::InvalidArgument(format!(
                "unknown tokenizer {other:?} (expected whitespace or chars4)"
            ))),
        }
    }
}

/// One input document.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorpusDoc {
    pub id: Option<String>,
    pub text: String,
}

/// Parses one corpus line: a JSON object with a string `"text"` and an
/// optional string or integer `"id"`.
pub fn parse_corpus_line(line: &str) -> std::result::Result<CorpusDoc, String> {
    let v: Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let obj = v.as_object().ok_or("line is not a JSON object")?;
    let text = obj
        .get("text")
        .and_then(Value::as_str)
        .ok_or("missing string field \"text\"")?
        .to_owned();
    let id = match obj.get("id") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(Value::Number(n)) if n.is_u64() || n.is_i64() => Some(n.to_string()),
        Some(_) => return Err("field \"id\" must be a string or an integer".into()),
    };
    Ok(CorpusDoc { id, text })
}

/// Splits a document into consecutive windows of `chunk_tokens` tokens.
/// Offsets are in tokens; snippet texts are slices of the original.
pub fn chunk_document(
    source_doc: &str,
    text: &str,
    chunk_tokens: usize,
    tokenizer: Tokenizer,
) -> Vec<Snippet> {
    assert!(chunk_tokens > 0, "chunk_tokens must be positive");
    let mut out = Vec::new();
    match tokenizer {
        Tokenizer::Whitespace => {
            let base = text.as_ptr() as usize;
            let spans: Vec<(usize, usize)> = text
                .split_whitespace()
                .map(|t| {
                    let start = t.as_ptr() as usize - base;
                    (start, start + t.len())
                })
                .collect();
            for (k, chunk) in spans.chunks(chunk_tokens).enumerate() {
                let (start, end) = (chunk[0].0, chunk[chunk.len() - 1].1);
                out.push(Snippet::new(source_doc, (k * chunk_tokens) as u64, &text[start..end]));
            }
        }
        Tokenizer::Chars4 => {
            let bounds: Vec<usize> = text.char_indices().map(|(i, _)| i).collect();
            let width = chunk_tokens.saturating_mul(4);
            for (k, chunk) in bounds.chunks(width).enumerate() {
                let start = chunk[0];
                let end = bounds.get((k + 1) * width).copied().unwrap_or(text.len());
                let piece = &text[start..end];
                if !piece.trim().is_empty() {
                    out.push(Snippet::new(source_doc, (k * chunk_tokens) as u64, piece));
                }
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: SnippetId,
    pub source_doc: String,
    pub offset: u64,
    pub byte_start: u64,
    pub byte_len: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub files: usize,
    pub documents: usize,
    pub empty_documents: usize,
    pub malformed_lines: usize,
    pub snippets_added: usize,
    pub duplicates: usize,
    pub store_size: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestConfig {
    pub chunk_tokens: usize,
    pub tokenizer: Tokenizer,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            chunk_tokens: DEFAULT_CHUNK_TOKENS,
            tokenizer: Tokenizer::Whitespace,
        }
    }
}

/// Append-only, deduplicating snippet store.
#[derive(Debug)]
pub struct SnippetStore {
    dir: PathBuf,
    index: Vec<IndexEntry>,
    ids: HashSet<SnippetId>,
}

impl SnippetStore {
    /// Opens (creating if needed) the store in `dir`, cutting off any data
    /// written after the last indexed snippet.
    pub fn open(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let index_path = dir.join(INDEX_FILE);
        let read = load_jsonl::<IndexEntry>(&index_path)?;
        if read.dropped_tail || read.missing_newline {
            log::warn!("{}: repairing unterminated index tail", index_path.display());
            JsonlWriter::open_repaired(&index_path, &read)?;
        }
        let index = read.records;
        let data_path = dir.join(DATA_FILE);
        let data = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&data_path)
            .map_err(io_err(&data_path))?;
        let data_len = data.metadata().map_err(io_err(&data_path))?.len();
        let indexed_end = index.last().map_or(0, |e| e.byte_start + e.byte_len);
        if data_len < indexed_end {
            return Err(PipelineError::StoreCorrupt {
                path: dir.display().to_string(),
                message: format!("data file has {data_len} bytes but the index covers {indexed_end}"),
            });
        }
        if data_len > indexed_end {
            log::warn!(
                "{}: dropping {} unindexed trailing bytes",
                data_path.display(),
                data_len - indexed_end
            );
            data.set_len(indexed_end).map_err(io_err(&data_path))?;
        }
        let mut ids = HashSet::with_capacity(index.len());
        for e in &index {
            if !ids.insert(e.id) {
                return Err(PipelineError::StoreCorrupt {
                    path: dir.display().to_string(),
                    message: format!("snippet {} indexed twice", e.id),
                });
            }
        }
        Ok(SnippetStore {
            dir: dir.to_path_buf(),
            index,
            ids,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn index(&self) -> &[IndexEntry] {
        &self.index
    }

    pub fn contains(&self, id: SnippetId) -> bool {
        self.ids.contains(&id)
    }

    /// Ingests line-delimited JSON corpus files. Malformed lines are logged
    /// and counted; snippets already in the store are skipped.
    pub fn ingest(&mut self, paths: &[PathBuf], config: IngestConfig) -> Result<IngestReport> {
        if config.chunk_tokens == 0 {
            return Err(PipelineError::InvalidArgument("chunk_tokens must be >= 1".into()));
        }
        let data_path = self.dir.join(DATA_FILE);
        let mut data = OpenOptions::new()
            .append(true)
            .open(&data_path)
            .map_err(io_err(&data_path))?;
        let mut index = JsonlWriter::open_repaired(
            &self.dir.join(INDEX_FILE),
            &load_jsonl::<IndexEntry>(&self.dir.join(INDEX_FILE))?,
        )?;
        let mut offset = self.index.last().map_or(0, |e| e.byte_start + e.byte_len);
        let mut report = IngestReport::default();
        for path in paths {
            let file = File::open(path).map_err(io_err(path))?;
            report.files += 1;
            let name = path
                .file_name()
                .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
            for (lineno, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(io_err(path))?;
                if line.trim().is_empty() {
                    continue;
                }
                let doc = match parse_corpus_line(&line) {
                    Ok(doc) => doc,
                    Err(e) => {
                        log::warn!("{}:{}: skipping malformed line: {e}", path.display(), lineno + 1);
                        report.malformed_lines += 1;
                        continue;
                    }
                };
                report.documents += 1;
                let source = doc.id.unwrap_or_else(|| format!("{name}:{}", lineno + 1));
                let snippets = chunk_document(&source, &doc.text, config.chunk_tokens, config.tokenizer);
                if snippets.is_empty() {
                    report.empty_documents += 1;
                }
                for s in snippets {
                    if self.ids.contains(&s.id) {
                        report.duplicates += 1;
                        continue;
                    }
                    let mut line = serde_json::to_vec(&s).expect("snippets serialize");
                    line.push(b'\n');
                    data.write_all(&line).map_err(io_err(&data_path))?;
                    let entry = IndexEntry {
                        id: s.id,
                        source_doc: s.source_doc,
                        offset: s.offset,
                        byte_start: offset,
                        byte_len: line.len() as u64,
                    };
                    index.append(&entry)?;
                    offset += line.len() as u64;
                    self.ids.insert(entry.id);
                    self.index.push(entry);
                    report.snippets_added += 1;
                }
            }
        }
        data.flush().map_err(io_err(&data_path))?;
        report.store_size = self.len();
        Ok(report)
    }

    /// All snippets in insertion order.
    pub fn snippets(&self) -> Result<Vec<Snippet>> {
        let data_path = self.dir.join(DATA_FILE);
        let mut bytes = Vec::new();
        let mut file = File::open(&data_path).map_err(io_err(&data_path))?;
        let end = self.index.last().map_or(0, |e| e.byte_start + e.byte_len);
        file.seek(SeekFrom::Start(0)).map_err(io_err(&data_path))?;
        file.take(end).read_to_end(&mut bytes).map_err(io_err(&data_path))?;
        self.index
            .iter()
            .map(|e| {
                let line = &bytes[e.byte_start as usize..(e.byte_start + e.byte_len) as usize];
                let s: Snippet = serde_json::from_slice(line).map_err(|err| PipelineError::StoreCorrupt {
                    path: data_path.display().to_string(),
                    message: format!("snippet at byte {}: {err}", e.byte_start),
                })?;
                if s.id != e.id {
                    return Err(PipelineError::StoreCorrupt {
                        path: data_path.display().to_string(),
                        message: format!("index says {} but data says {}", e.id, s.id),
                    });
                }
                Ok(s)
            })
            .collect()
    }
}

/// The store in a seeded random order, starting at `cursor`.
pub fn make_stream(store: &SnippetStore, shuffle_seed: u64, cursor: usize) -> Result<Vec<Snippet>> {
    if store.is_empty() {
        return Err(PipelineError::EmptyStore(store.dir.display().to_string()));
    }
    let mut snippets = store.snippets()?;
    snippets.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
    if cursor > snippets.len() {
        return Err(PipelineError::InvalidArgument(format!(
            "cursor {cursor} is past the end of a {}-snippet stream",
            snippets.len()
        )));
    }
    Ok(snippets.split_off(cursor))
}

/// Pairs snippets with their features.
pub fn stream_items(snippets: Vec<Snippet>, space: &FeatureSpace) -> Result<Vec<StreamItem>> {
    snippets
        .into_iter()
        .map(|snippet| {
            let features = space.featurize_text(&snippet.text)?;
            Ok(StreamItem { snippet, features })
        })
        .collect()
}

/// Writes the labeled set as line-delimited JSON, replacing `path`.
pub fn save_labeled_set(path: &Path, set: &LabeledSet) -> Result<()> {
    let mut w = JsonlWriter::create(path)?;
    for r in set.records() {
        w.append(r)?;
    }
    Ok(())
}

/// Loads a labeled set; a torn final line is dropped with a warning.
pub fn load_labeled_set(path: &Path) -> Result<LabeledSet> {
    let read = load_jsonl::<LabeledRecord>(path)?;
    if read.dropped_tail {
        log::warn!("{}: dropped a partial final record", path.display());
    }
    Ok(LabeledSet::from_records(read.records)?)
}

/// Result of scoring a whole store.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterOutput {
    /// Ids of passing snippets, ascending.
    pub pass_ids: Vec<SnippetId>,
    pub threshold_used: f64,
    /// SHA-256 of the serialized scorer.
    pub scorer_version: String,
    pub passed: usize,
    pub failed: usize,
}

/// Scores every snippet and passes those with `score > decision_threshold`.
/// Work is split into `workers` contiguous shards; the merged result is
/// ordered by id and does not depend on `workers`.
pub fn apply_filter(
    params: &ScorerParams,
    store: &SnippetStore,
    decision_threshold: f64,
    workers: usize,
) -> Result<FilterOutput> {
    if !(0.0..=1.0).contains(&decision_threshold) {
        return Err(PipelineError::InvalidArgument(format!(
            "decision threshold {decision_threshold} is outside [0, 1]"
        )));
    }
    let snippets = store.snippets()?;
    let workers = workers.max(1);
    let shard = snippets.len().div_ceil(workers).max(1);
    let results: Vec<Result<Vec<SnippetId>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = snippets
            .chunks(shard)
            .map(|part| {
                scope.spawn(move || {
                    let mut pass = Vec::new();
                    for s in part {
                        let x = params.space.featurize_text(&s.text)?;
                        let score = crate::scorer::score(params, &x)?;
                        if score > decision_threshold {
                            pass.push(s.id);
                        }
                    }
                    Ok(pass)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("filter worker panicked"))
            .collect()
    });
    let mut pass_ids = Vec::new();
    for r in results {
        pass_ids.extend(r?);
    }
    pass_ids.sort_unstable();
    Ok(FilterOutput {
        passed: pass_ids.len(),
        failed: snippets.len() - pass_ids.len(),
        pass_ids,
        threshold_used: decision_threshold,
        scorer_version: sha256_hex(&params.to_model_string()),
    })
}

pub const PASS_IDS_FILE: &str = "pass_ids.txt";
pub const FILTER_SUMMARY_FILE: &str = "filter_summary.json";

#[derive(Serialize, Deserialize)]
struct FilterSummary {
    threshold_used: f64,
    scorer_version: String,
    passed: usize,
    failed: usize,
}

/// Writes `pass_ids.txt` (one decimal id per line) and `filter_summary.json`.
pub fn write_filter_output(dir: &Path, out: &FilterOutput) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut text = String::with_capacity(out.pass_ids.len() * 21);
    for id in &out.pass_ids {
        text.push_str(&id.to_string());
        text.push('\n');
    }
    let ids_path = dir.join(PASS_IDS_FILE);
    fs::write(&ids_path, text).map_err(io_err(&ids_path))?;
    let summary = FilterSummary {
        threshold_used: out.threshold_used,
        scorer_version: out.scorer_version.clone(),
        passed: out.passed,
        failed: out.failed,
    };
    let summary_path = dir.join(FILTER_SUMMARY_FILE);
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    fs::write(&summary_path, json + "\n").map_err(io_err(&summary_path))?;
    Ok(())
}

/// Answers ids already present in a resumed labeled set with their
/// recorded response, and defers everything else to `inner`.
pub struct ResumeOracle<O> {
    inner: O,
    recorded: HashMap<SnippetId, LabeledRecord>,
}

impl<O: Oracle> ResumeOracle<O> {
    pub fn new(inner: O, recorded: &LabeledSet) -> Self {
        ResumeOracle {
            inner,
            recorded: recorded
                .records()
                .iter()
                .map(|r| (r.snippet_id, r.clone()))
                .collect(),
        }
    }
}

impl<O: Oracle> Oracle for ResumeOracle<O> {
    fn label(&self, snippet: &Snippet) -> OracleResult<OracleResponse> {
        match self.recorded.get(&snippet.id) {
            Some(r) => Ok(OracleResponse {
                snippet_id: r.snippet_id,
                label: r.label,
                raw_text: None,
                latency_ms: r.latency_ms,
                cost_micro_usd: r.cost_micro_usd,
            }),
            None => self.inner.label(snippet),
        }
    }
}

pub const LABELED_FILE: &str = "labeled.jsonl";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const MODEL_FILE: &str = "model.txt";
pub const LEDGER_FILE: &str = "ledger.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CI_UPDATES_FILE: &str = "ci_updates.json";

/// What a distillation run leaves in its output directory besides the
/// labeled set, model, and metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    #[serde(flatten)]
    pub status: RunStatus,
    pub strategy: String,
    pub consumed: u64,
    pub labeled: usize,
    pub minority_fraction: f64,
    pub queried_lambda: f64,
    pub queries: u64,
    pub cost_micro_usd: u64,
    pub oracle_failures: u64,
    pub last_estimate: Option<f64>,
    pub ci_updates: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerFile {
    pub rounds: Vec<RoundCost>,
    pub total_queries: u64,
    pub total_micro_usd: u64,
    pub total_usd: String,
}

/// Inputs of a store-backed distillation run.
pub struct StoreRun<'a> {
    pub config: &'a DistillConfig,
    pub store: &'a SnippetStore,
    pub shuffle_seed: u64,
    pub space: FeatureSpace,
    pub train: TrainConfig,
    pub out_dir: &'a Path,
    /// Continue from the labeled set already in `out_dir`.
    pub resume: bool,
    pub control: RunControl,
}

struct DirObserver {
    labeled: JsonlWriter,
    metrics: JsonlWriter,
    recorded: HashMap<SnippetId, LabeledRecord>,
    replayed: usize,
}

impl<M> DistillObserver<M> for DirObserver {
    fn on_event(&mut self, event: &MetricsEvent) -> std::result::Result<(), String> {
        self.metrics.append(event).map_err(|e| e.to_string())
    }

    fn on_record(&mut self, record: &LabeledRecord) -> std::result::Result<(), String> {
        if let Some(prev) = self.recorded.get(&record.snippet_id) {
            if prev.label != record.label || prev.position != record.position || prev.round != record.round {
                return Err(format!(
                    "snippet {} was recorded at position {} (round {}) but is now labeled at position {} (round {})",
                    record.snippet_id, prev.position, prev.round, record.position, record.round
                ));
            }
            self.replayed += 1;
            return Ok(());
        }
        if self.replayed < self.recorded.len() {
            return Err(format!(
                "new label for snippet {} before all {} recorded labels were replayed",
                record.snippet_id,
                self.recorded.len()
            ));
        }
        self.labeled.append(record).map_err(|e| e.to_string())
    }
}

/// Runs distillation over a shuffled store with the linear scorer.
pub fn distill_store<O: Oracle>(run: &StoreRun<'_>, oracle: &O) -> Result<RunSummary> {
    let stream = stream_items(make_stream(run.store, run.shuffle_seed, 0)?, &run.space)?;
    let factory = LinearScorerFactory {
        space: run.space,
        config: run.train.clone(),
    };
    distill_to_dir(
        run.config,
        stream,
        oracle,
        &factory,
        run.out_dir,
        run.resume,
        run.control,
        |m: &ScorerParams| Some(m.to_model_string()),
    )
}

/// Runs distillation, streaming labeled records and metrics into
/// `out_dir` and writing the model (when `save_model` yields text), cost
/// ledger, and run summary at the end.
///
/// With `resume`, the labeled set already in `out_dir` is replayed
/// (answered from the file, not the oracle) and extended, so a run
/// interrupted at any point and resumed produces the same files as an
/// uninterrupted one.
#[allow(clippy::too_many_arguments)]
pub fn distill_to_dir<O, F>(
    config: &DistillConfig,
    stream: Vec<StreamItem>,
    oracle: &O,
    factory: &F,
    out_dir: &Path,
    resume: bool,
    control: RunControl,
    save_model: impl Fn(&F::Model) -> Option<String>,
) -> Result<RunSummary>
where
    O: Oracle,
    F: ScorerFactory,
{
    let dir = out_dir;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let labeled_path = dir.join(LABELED_FILE);
    let (prior, writer) = if resume {
        let read = load_jsonl::<LabeledRecord>(&labeled_path)?;
        if read.dropped_tail {
            log::warn!("{}: dropped a partial final record", labeled_path.display());
        }
        let writer = JsonlWriter::open_repaired(&labeled_path, &read)?;
        (LabeledSet::from_records(read.records)?, writer)
    } else {
        (LabeledSet::new(), JsonlWriter::create(&labeled_path)?)
    };
    let mut observer = DirObserver {
        labeled: writer,
        metrics: JsonlWriter::create(&dir.join(METRICS_FILE))?,
        recorded: prior
            .records()
            .iter()
            .map(|r| (r.snippet_id, r.clone()))
            .collect(),
        replayed: 0,
    };
    let resumed = ResumeOracle::new(oracle, &prior);
    let outcome = run_distillation(config, stream, &resumed, factory, control, &mut observer)?;
    if observer.replayed < prior.len() {
        return Err(PipelineError::ResumeMismatch(format!(
            "only {} of {} recorded labels were reproduced",
            observer.replayed,
            prior.len()
        )));
    }
    let model_path = dir.join(MODEL_FILE);
    match outcome.model.as_ref().and_then(&save_model) {
        Some(text) => fs::write(&model_path, text).map_err(io_err(&model_path))?,
        None => {
            if model_path.exists() {
                fs::remove_file(&model_path).map_err(io_err(&model_path))?;
            }
        }
    }
    let ledger = LedgerFile {
        rounds: outcome.ledger.per_round(),
        total_queries: outcome.ledger.total_queries(),
        total_micro_usd: outcome.ledger.total_micro_usd(),
        total_usd: crate::oracle::format_usd(outcome.ledger.total_micro_usd()),
    };
    write_json(&dir.join(LEDGER_FILE), &ledger)?;
    let summary = RunSummary {
        status: outcome.status,
        strategy: config.strategy.name().to_string(),
        consumed: outcome.consumed,
        labeled: outcome.labeled.len(),
        minority_fraction: minority_fraction(&outcome.labeled),
        queried_lambda: outcome.labeled.imbalance(),
        queries: outcome.ledger.total_queries(),
        cost_micro_usd: outcome.ledger.total_micro_usd(),
        oracle_failures: outcome.oracle_failures,
        last_estimate: outcome.last_estimate,
        ci_updates: outcome.ci_updates.len(),
    };
    write_json(&dir.join(SUMMARY_FILE), &summary)?;
    write_json(&dir.join(CI_UPDATES_FILE), &outcome.ci_updates.iter().collect::<Vec<&CiUpdate>>())?;
    Ok(summary)
}

fn minority_fraction(set: &LabeledSet) -> f64 {
    let r = crate::label::imbalance_ratio(&set.labels());
    r.lambda / (1.0 + r.lambda)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value).expect("values serialize");
    fs::write(path, json + "\n").map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::label::Label;

    fn words(n: usize) -> String {
        (0..n).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ")
    }

    #[test]
    fn whitespace_chunking_offsets() {
        let s = chunk_document("d", &words(2048), 1024, Tokenizer::Whitespace);
        assert_eq!(s.len(), 2);
        assert_eq!((s[0].offset, s[1].offset), (0, 1024));
        assert!(s[1].text.starts_with("w1024 "));
        assert!(chunk_document("d", "", 1024, Tokenizer::Whitespace).is_empty());
        assert!(chunk_document("d", "  \n\t ", 1024, Tokenizer::Whitespace).is_empty());
        let short = chunk_document("d", "a  b\nc", 2, Tokenizer::Whitespace);
        assert_eq!(short.iter().map(|s| s.text.as_str()).collect::<Vec<_>>(), ["a  b", "c"]);
    }

    #[test]
    fn chars4_chunking_respects_char_boundaries() {
        let text = "é".repeat(10);
        let s = chunk_document("d", &text, 1, Tokenizer::Chars4);
        assert_eq!(s.len(), 3);
        assert_eq!(s[0].text, "éééé");
        assert_eq!(s[2].text, "éé");
        assert_eq!(s[2].offset, 2);
    }

    #[test]
    fn corpus_line_parsing() {
        assert_eq!(
            parse_corpus_line(r#"{"text":"hi","id":7}"#).unwrap(),
            CorpusDoc {
                id: Some("7".into()),
                text: "hi".into()
            }
        );
        assert_eq!(parse_corpus_line(r#"{"text":"hi"}"#).unwrap().id, None);
        assert!(parse_corpus_line(r#"{"id":1}"#).is_err());
        assert!(parse_corpus_line(r#"{"text":3}"#).is_err());
        assert!(parse_corpus_line(r#"{"text":"a","id":1.5}"#).is_err());
        assert!(parse_corpus_line("[1]").is_err());
        assert!(parse_corpus_line("{").is_err());
    }

    fn corpus(dir: &Path) -> PathBuf {
        let p = dir.join("corpus.jsonl");
        fs::write(
            &p,
            "{\"id\":\"a\",\"text\":\"alpha beta gamma delta\"}\nnot json\n{\"text\":\"\"}\n{\"id\":\"b\",\"text\":\"epsilon zeta\"}\n",
        )
        .unwrap();
        p
    }

    #[test]
    fn ingest_counts_and_deduplicates() {
        let tmp = tempfile::tempdir().unwrap();
        let input = corpus(tmp.path());
        let mut store = SnippetStore::open(&tmp.path().join("store")).unwrap();
        let cfg = IngestConfig {
            chunk_tokens: 2,
            tokenizer: Tokenizer::Whitespace,
        };
        let r = store.ingest(std::slice::from_ref(&input), cfg).unwrap();
        assert_eq!((r.documents, r.malformed_lines, r.empty_documents), (3, 1, 1));
        assert_eq!((r.snippets_added, r.duplicates, r.store_size), (3, 0, 3));
        let again = store.ingest(&[input], cfg).unwrap();
        assert_eq!((again.snippets_added, again.duplicates), (0, 3));
        let reopened = SnippetStore::open(&tmp.path().join("store")).unwrap();
        assert_eq!(reopened.len(), 3);
        let texts: Vec<String> = reopened.snippets().unwrap().into_iter().map(|s| s.text).collect();
        assert_eq!(texts, ["alpha beta", "gamma delta", "epsilon zeta"]);
    }

    #[test]
    fn unindexed_data_tail_is_cut() {
        let tmp = tempfile::tempdir().unwrap();
        let input = corpus(tmp.path());
        let dir = tmp.path().join("store");
        let mut store = SnippetStore::open(&dir).unwrap();
        store.ingest(&[input], IngestConfig::default()).unwrap();
        let before = fs::read(dir.join(DATA_FILE)).unwrap();
        let mut f = OpenOptions::new().append(true).open(dir.join(DATA_FILE)).unwrap();
        f.write_all(b"{\"id\":1,\"sou").unwrap();
        drop(f);
        let reopened = SnippetStore::open(&dir).unwrap();
        assert_eq!(fs::read(dir.join(DATA_FILE)).unwrap(), before);
        assert_eq!(reopened.snippets().unwrap().len(), 2);
    }

    #[test]
    fn stream_is_a_seeded_permutation_with_cursor() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("c.jsonl");
        let lines: String = (0..150).map(|i| format!("{{\"text\":\"doc number {i}\"}}\n")).collect();
        fs::write(&p, lines).unwrap();
        let mut store = SnippetStore::open(&tmp.path().join("s")).unwrap();
        store.ingest(&[p], IngestConfig::default()).unwrap();
        let a = make_stream(&store, 3, 0).unwrap();
        assert_eq!(a, make_stream(&store, 3, 0).unwrap());
        assert_ne!(a, make_stream(&store, 4, 0).unwrap());
        let ids: HashSet<_> = a.iter().map(|s| s.id).collect();
        assert_eq!(ids.len(), 150);
        assert_eq!(make_stream(&store, 3, 40).unwrap(), a[40..].to_vec());
        assert!(make_stream(&store, 3, 151).is_err());
        let empty = SnippetStore::open(&tmp.path().join("empty")).unwrap();
        assert!(matches!(make_stream(&empty, 0, 0), Err(PipelineError::EmptyStore(_))));
    }

    fn record(id: SnippetId, label: Label) -> LabeledRecord {
        LabeledRecord {
            snippet_id: id,
            label,
            round: 0,
            position: id,
            score: None,
            raw_sha256: None,
            latency_ms: 0,
            cost_micro_usd: 5_000,
        }
    }

    #[test]
    fn labeled_set_round_trip_and_torn_tail() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("l.jsonl");
        let set = LabeledSet::from_records((0..5).map(|i| record(i, Label::from_bool(i % 2 == 0))).collect()).unwrap();
        save_labeled_set(&path, &set).unwrap();
        assert_eq!(load_labeled_set(&path).unwrap(), set);
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
        assert_eq!(load_labeled_set(&path).unwrap().len(), 4);
    }

    #[test]
    fn filter_extremes_and_sharding() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("c.jsonl");
        let lines: String = (0..40)
            .map(|i| format!("{{\"text\":\"{} item {i}\"}}\n", if i % 3 == 0 { "good" } else { "bad" }))
            .collect();
        fs::write(&p, lines).unwrap();
        let mut store = SnippetStore::open(&tmp.path().join("s")).unwrap();
        store.ingest(&[p], IngestConfig::default()).unwrap();
        let space = FeatureSpace::hashed(1 << 16, 1);
        let mut params = ScorerParams::zeros(space);
        let good = space.featurize_text("good").unwrap();
        params.weights[good.indices[0] as usize] = 5.0;
        params.bias = -1.0;
        assert_eq!(apply_filter(&params, &store, 0.0, 2).unwrap().passed, 40);
        assert_eq!(apply_filter(&params, &store, 1.0, 2).unwrap().passed, 0);
        let one = apply_filter(&params, &store, 0.5, 1).unwrap();
        assert_eq!(one, apply_filter(&params, &store, 0.5, 7).unwrap());
        assert_eq!(one.passed, 14);
        assert_eq!(one.passed + one.failed, 40);
        assert!(apply_filter(&params, &store, 1.5, 1).is_err());
        let out = tmp.path().join("out");
        write_filter_output(&out, &one).unwrap();
        assert_eq!(fs::read_to_string(out.join(PASS_IDS_FILE)).unwrap().lines().count(), 14);
    }
}
