//! Shared fixtures for the integration and acceptance tests.
#![allow(dead_code)]

pub mod stub;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::Deserialize;

use sieve_core::distiller::{run_distillation, DistillConfig, NoopObserver, RunControl, RunStatus, Strategy};
use sieve_core::oracle::{
    format_usd, parse_verdict, render_prompt, LlmClient, LlmConfig, LlmOracle, Oracle, OracleError,
    PromptTemplate, ReplayOracle, ReplayStore, RetryPolicy, TemplateName,
};
use sieve_core::pipeline::{
    apply_filter, distill_store, stream_items, write_filter_output, IngestConfig, SnippetStore, StoreRun,
    FILTER_SUMMARY_FILE, LABELED_FILE, LEDGER_FILE, METRICS_FILE, MODEL_FILE, PASS_IDS_FILE, SUMMARY_FILE,
};
use sieve_core::scorer::{FeatureSpace, ScorerParams, TrainConfig};
use sieve_core::{Label, Snippet};

use stub::{StubReply, StubServer};

const TOPICS: [&str; 8] = ["rail", "budget", "weather", "garden", "chess", "opera", "tariff", "orbit"];
const FILLER: [&str; 10] = ["the", "a", "report", "said", "new", "local", "plan", "today", "after", "many"];

/// A small synthetic corpus: document `i` mentions a couple of topic words
/// among filler; one topic in five marks the minority class.
pub fn write_corpus(path: &Path, docs: usize) {
    let mut out = String::new();
    for i in 0..docs {
        let mut words = Vec::new();
        for k in 0..12 {
            words.push(FILLER[(i * 7 + k * 3) % FILLER.len()]);
        }
        words.insert(3, TOPICS[i % TOPICS.len()]);
        words.insert(8, TOPICS[(i / 3) % TOPICS.len()]);
        let text = format!("{} #{i}", words.join(" "));
        out.push_str(&serde_json::json!({"id": format!("doc-{i}"), "text": text}).to_string());
        out.push('\n');
    }
    fs::write(path, out).unwrap();
}

/// Ground-truth rule used to pre-record replay answers: snippets mentioning
/// "chess" or "orbit" are class 0.
pub fn rule_label(text: &str) -> Label {
    Label::from_bool(!(text.contains("chess") || text.contains("orbit")))
}

pub struct World {
    pub dir: tempfile::TempDir,
    pub store: SnippetStore,
    pub replay: Arc<ReplayStore>,
}

/// Ingests a corpus and records a replay answer for every snippet.
pub fn world(docs: usize) -> World {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.jsonl");
    write_corpus(&corpus, docs);
    let mut store = SnippetStore::open(&dir.path().join("store")).unwrap();
    store.ingest(&[corpus], IngestConfig::default()).unwrap();
    let replay = ReplayStore::open(&dir.path().join("replay.jsonl")).unwrap();
    for s in store.snippets().unwrap() {
        replay.record(s.id, rule_label(&s.text), None).unwrap();
    }
    World {
        dir,
        store,
        replay: Arc::new(replay),
    }
}

pub fn space() -> FeatureSpace {
    FeatureSpace::hashed(1 << 12, 17)
}

pub fn train() -> TrainConfig {
    TrainConfig {
        seed: 5,
        ..TrainConfig::default()
    }
}

const COMPARED: [&str; 5] = [LABELED_FILE, MODEL_FILE, METRICS_FILE, LEDGER_FILE, SUMMARY_FILE];

fn run_dir(
    world: &World,
    config: &DistillConfig,
    out: &Path,
    resume: bool,
    stop: Option<u64>,
) -> Result<sieve_core::pipeline::RunSummary, String> {
    let run = StoreRun {
        config,
        store: &world.store,
        shuffle_seed: 99,
        space: space(),
        train: train(),
        out_dir: out,
        resume,
        control: RunControl {
            stop_before_position: stop,
        },
    };
    distill_store(&run, &ReplayOracle::new(world.replay.clone())).map_err(|e| e.to_string())
}

fn filter_dir(world: &World, dir: &Path, workers: usize) -> Result<(), String> {
    let text = fs::read_to_string(dir.join(MODEL_FILE)).map_err(|e| e.to_string())?;
    let params = ScorerParams::from_model_str(&text).map_err(|e| e.to_string())?;
    let out = apply_filter(&params, &world.store, 0.5, workers).map_err(|e| e.to_string())?;
    write_filter_output(&dir.join("filter"), &out).map_err(|e| e.to_string())
}

fn same_file(a: &Path, b: &Path) -> Result<(), String> {
    let (x, y) = (fs::read(a), fs::read(b));
    match (x, y) {
        (Ok(x), Ok(y)) if x == y => Ok(()),
        (Ok(_), Ok(_)) => Err(format!("{} differs from {}", b.display(), a.display())),
        (x, y) => Err(format!("cannot read outputs: {:?} {:?}", x.err(), y.err())),
    }
}

/// Uninterrupted run versus a run killed at three cursors (with a torn
/// final line after one of the kills) and resumed each time.
pub fn resume_determinism() -> Result<String, String> {
    let world = world(600);
    let n = world.store.len() as u64;
    let mut config = DistillConfig::new(32, 256, n);
    config.parallelism = 16;
    let full = world.dir.path().join("full");
    let reference = run_dir(&world, &config, &full, false, None)?;
    if reference.status != RunStatus::Completed {
        return Err(format!("reference run ended with {:?}", reference.status));
    }
    filter_dir(&world, &full, 1)?;

    let cursors = [reference.consumed / 4, reference.consumed / 2, 3 * reference.consumed / 4];
    let resumed = world.dir.path().join("resumed");
    let mut resume = false;
    for (k, &cursor) in cursors.iter().enumerate() {
        config.parallelism = [3, 16, 1][k];
        let s = run_dir(&world, &config, &resumed, resume, Some(cursor))?;
        if s.status != (RunStatus::Interrupted { next_position: cursor }) {
            return Err(format!("kill at {cursor} ended with {:?}", s.status));
        }
        if k == 1 {
            // A crash mid-append leaves a partial final record behind.
            let path = resumed.join(LABELED_FILE);
            let mut bytes = fs::read(&path).unwrap();
            bytes.extend_from_slice(b"{\"snippet_id\":12,\"lab");
            fs::write(&path, bytes).unwrap();
        }
        resume = true;
    }
    config.parallelism = 5;
    let finished = run_dir(&world, &config, &resumed, true, None)?;
    if finished.status != RunStatus::Completed {
        return Err(format!("resumed run ended with {:?}", finished.status));
    }
    filter_dir(&world, &resumed, 7)?;
    for name in COMPARED {
        same_file(&full.join(name), &resumed.join(name))?;
    }
    for name in [PASS_IDS_FILE, FILTER_SUMMARY_FILE] {
        same_file(&full.join("filter").join(name), &resumed.join("filter").join(name))?;
    }
    Ok(format!(
        "{} snippets, {} labels; killed at {:?} and resumed with parallelism 3/16/1/5; labeled set, scorer, metrics, ledger and filter output bit-identical",
        n, reference.labeled, cursors
    ))
}

#[derive(Deserialize)]
struct Transcript {
    template: String,
    response: String,
    expected: serde_json::Value,
}

fn fast_retry() -> RetryPolicy {
    RetryPolicy {
        attempts: 3,
        base_delay_ms: 20,
        factor: 4,
    }
}

pub fn llm_config(url: &str) -> LlmConfig {
    let mut c = LlmConfig::new(url, "stub-model");
    c.token = Some("secret-token".into());
    c.retry = fast_retry();
    c.timeout_ms = 5_000;
    c
}

/// Golden renders, golden transcripts, retry/backoff against a stub
/// endpoint, and ledger arithmetic over 1000 queries.
pub fn protocol_conformance(fixtures: &Path) -> Result<String, String> {
    let golden = fixtures.join("golden");
    let snippet_text = fs::read_to_string(golden.join("snippet.txt")).map_err(|e| e.to_string())?;
    for name in TemplateName::BUILTIN {
        let t = PromptTemplate::builtin(name).map_err(|e| e.to_string())?;
        let rendered = render_prompt(&t, &snippet_text).map_err(|e| e.to_string())?;
        let expected = fs::read_to_string(golden.join("prompts").join(format!("{name}.txt"))).map_err(|e| e.to_string())?;
        if rendered != expected {
            return Err(format!("template {name} does not match its golden rendering"));
        }
    }

    let transcripts = fs::read_to_string(golden.join("transcripts.jsonl")).map_err(|e| e.to_string())?;
    let mut checked = 0;
    for line in transcripts.lines() {
        let tr: Transcript = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let name: TemplateName = tr.template.parse().map_err(|e: OracleError| e.to_string())?;
        let t = PromptTemplate::builtin(name).unwrap();
        let got = parse_verdict(&tr.response, &t);
        let ok = match (&tr.expected, &got) {
            (serde_json::Value::String(s), Err(OracleError::UnparseableVerdict { .. })) => s == "unparseable",
            (serde_json::Value::Number(n), Ok(label)) => n.as_u64() == Some(u64::from(label.as_u8())),
            _ => false,
        };
        if !ok {
            return Err(format!("transcript {:?} ({}) gave {got:?}", tr.response, tr.template));
        }
        checked += 1;
    }

    // 503, then 429, then an answer: two retries with 20 ms and 80 ms waits.
    let server = StubServer::start(|i, _| match i {
        0 => StubReply::Status(503, "overloaded".into()),
        1 => StubReply::Status(429, "slow down".into()),
        _ => StubReply::Chat("A council vote is a political act.\nPASS".into()),
    });
    let politics = PromptTemplate::builtin(TemplateName::Politics).unwrap();
    let oracle = LlmOracle::new(LlmClient::new(llm_config(&server.url)).unwrap(), politics.clone()).unwrap();
    let started = Instant::now();
    let snippet = Snippet::new("doc", 0, snippet_text.clone());
    let resp = oracle.label(&snippet).map_err(|e| e.to_string())?;
    let waited = started.elapsed();
    if resp.label != Label::One || server.hits() != 3 || waited < Duration::from_millis(100) {
        return Err(format!("retry path: label {:?}, {} hits, {:?}", resp.label, server.hits(), waited));
    }
    let req = &server.requests()[2];
    if req.body["temperature"] != 0
        || req.body["model"] != "stub-model"
        || req.authorization.as_deref() != Some("Bearer secret-token")
        || req.prompt() != render_prompt(&politics, &snippet_text).unwrap()
    {
        return Err(format!("unexpected request {:?}", req.body));
    }

    let fatal = StubServer::start(|_, _| StubReply::Status(400, "bad request".into()));
    let o = LlmOracle::new(LlmClient::new(llm_config(&fatal.url)).unwrap(), politics.clone()).unwrap();
    match o.label(&snippet) {
        Err(OracleError::HttpStatus { status: 400, .. }) if fatal.hits() == 1 => {}
        other => return Err(format!("400 path: {other:?} after {} hits", fatal.hits())),
    }
    let down = StubServer::start(|_, _| StubReply::Status(500, "down".into()));
    let o = LlmOracle::new(LlmClient::new(llm_config(&down.url)).unwrap(), politics.clone()).unwrap();
    match o.label(&snippet) {
        Err(OracleError::OracleUnavailable { attempts: 3, .. }) if down.hits() == 3 => {}
        other => return Err(format!("500 path: {other:?} after {} hits", down.hits())),
    }
    let vague = StubServer::start(|_, _| StubReply::Chat("Could be either.".into()));
    let o = LlmOracle::new(LlmClient::new(llm_config(&vague.url)).unwrap(), politics.clone()).unwrap();
    match o.label(&snippet) {
        Err(OracleError::UnparseableVerdict { cost_micro_usd: 5_000, .. }) => {}
        other => return Err(format!("unparseable path: {other:?}")),
    }

    // 1000 paid queries through a full random-strategy run at the default rate.
    let judge = StubServer::start(|_, req| {
        let verdict = if req.prompt().contains("chess") { "FAIL" } else { "PASS" };
        StubReply::Chat(format!("Considered the snippet.\n{verdict}"))
    });
    let quality = PromptTemplate::builtin(TemplateName::Quality).unwrap();
    let mut cfg = llm_config(&judge.url);
    cfg.token = None;
    let o = LlmOracle::new(LlmClient::new(cfg).unwrap(), quality).unwrap();
    let snippets: Vec<Snippet> = (0..1_500)
        .map(|i| Snippet::new("ledger", i, format!("item {i} about {}", TOPICS[i as usize % TOPICS.len()])))
        .collect();
    let stream = stream_items(snippets, &space()).map_err(|e| e.to_string())?;
    let mut dc = DistillConfig::new(100, 1_000, 1_500);
    dc.strategy = Strategy::Random;
    let factory = sieve_core::scorer::LinearScorerFactory {
        space: space(),
        config: train(),
    };
    let out = run_distillation(&dc, stream, &o, &factory, RunControl::default(), &mut NoopObserver)
        .map_err(|e| e.to_string())?;
    let total = format_usd(out.ledger.total_micro_usd());
    if out.ledger.total_queries() != 1_000 || judge.hits() != 1_000 || total != "5.00" {
        return Err(format!(
            "ledger: {} queries, {} requests, {total} USD",
            out.ledger.total_queries(),
            judge.hits()
        ));
    }
    Ok(format!(
        "5 golden renders, {checked} transcripts, 503/429 retry with backoff ({} ms), 400 fatal, 500x3 unavailable, unparseable charged; 1000 queries -> {total} USD",
        waited.as_millis()
    ))
}

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}
