//! Subcommand drivers. Each validates its inputs completely before doing
//! any work, so invocation mistakes surface as exit code 2 with nothing
//! written.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use serde::Deserialize;

use sieve_core::distiller::{RunControl, RunStatus, Strategy};
use sieve_core::oracle::{
    format_usd, CachedOracle, KeywordOracle, LlmClient, LlmOracle, Oracle, ReplayOracle, ReplayStore,
};
use sieve_core::pipeline::{
    self, apply_filter, distill_store, distill_to_dir, write_filter_output, IngestConfig, LedgerFile, RunSummary,
    SnippetStore, StoreRun, Tokenizer, CI_UPDATES_FILE, DATA_FILE, FILTER_SUMMARY_FILE, INDEX_FILE, LABELED_FILE,
    LEDGER_FILE, METRICS_FILE, MODEL_FILE, PASS_IDS_FILE, SUMMARY_FILE,
};
use sieve_core::scorer::{PassthroughScorer, ScorerParams};
use sieve_core::trm::compute_trm_exact;
use sieve_core::simulation::{
    balance_comparison, balanced_accuracy, certify, coverage_experiment, generate_instance, measure_smoothness,
    run_comparison, shrinkage_trace, CoverageConfig, GaussianTask, SyntheticInstance,
};
use sieve_core::{Label, SnippetId};

use crate::config::{OracleKind, RunConfig, RUN_CONFIG_FILE};
use crate::{usage, DistillArgs, FilterArgs, IngestArgs, ReportArgs, SimulateArgs, Suite, UsageError};

/// Label cache written next to sim and llm runs; usable later with
/// `--oracle replay`.
pub const REPLAY_FILE: &str = "replay.jsonl";

const RUN_FILES: [&str; 8] = [
    RUN_CONFIG_FILE,
    LABELED_FILE,
    METRICS_FILE,
    MODEL_FILE,
    LEDGER_FILE,
    SUMMARY_FILE,
    CI_UPDATES_FILE,
    REPLAY_FILE,
];

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        usage!("{what} {} does not exist", path.display());
    }
    Ok(())
}

fn require_store(dir: &Path) -> Result<()> {
    if !dir.join(INDEX_FILE).is_file() {
        usage!("{} is not a snippet store (no {INDEX_FILE}); run `sieve ingest` first", dir.display());
    }
    Ok(())
}

fn remove_if_present(path: &Path) -> Result<()> {
    if path.exists() {
        fs::remove_file(path).with_context(|| format!("removing {}", path.display()))?;
    }
    Ok(())
}

// ---------------------------------------------------------------- ingest

pub fn ingest(args: &IngestArgs) -> Result<()> {
    for f in &args.files {
        if !f.is_file() {
            usage!("input {} does not exist\n\nUsage: sieve ingest --out <STORE> <FILES>...", f.display());
        }
    }
    let tokenizer: Tokenizer = args.tokenizer.parse().map_err(|e| UsageError(format!("{e}")))?;
    if args.chunk_tokens == 0 {
        usage!("--chunk-tokens must be positive");
    }
    let existing = args.out.join(INDEX_FILE).exists() || args.out.join(DATA_FILE).exists();
    if existing && !args.append && !args.force {
        usage!(
            "store {} already exists; pass --append to add to it or --force to replace it",
            args.out.display()
        );
    }
    if args.force {
        remove_if_present(&args.out.join(INDEX_FILE))?;
        remove_if_present(&args.out.join(DATA_FILE))?;
    }
    let mut store = SnippetStore::open(&args.out)?;
    let report = store.ingest(
        &args.files,
        IngestConfig {
            chunk_tokens: args.chunk_tokens,
            tokenizer,
        },
    )?;
    println!(
        "ingested {} documents from {} files: {} snippets added, {} duplicates, {} empty documents, {} malformed lines; store has {} snippets",
        report.documents,
        report.files,
        report.snippets_added,
        report.duplicates,
        report.empty_documents,
        report.malformed_lines,
        report.store_size
    );
    Ok(())
}

// ---------------------------------------------------------------- distill

/// Applies flags (already merged with the environment by clap) over `cfg`.
pub fn apply_flags(cfg: &mut RunConfig, a: &DistillArgs) {
    fn set<T: Clone>(slot: &mut T, v: &Option<T>) {
        if let Some(v) = v {
            *slot = v.clone();
        }
    }
    fn set_opt<T: Clone>(slot: &mut Option<T>, v: &Option<T>) {
        if v.is_some() {
            *slot = v.clone();
        }
    }
    if a.store.is_some() || a.instance.is_some() {
        cfg.input.store = a.store.clone();
        cfg.input.instance = a.instance.clone();
    }
    set(&mut cfg.oracle.kind, &a.oracle);
    set(&mut cfg.distill.strategy, &a.strategy);
    set(&mut cfg.distill.band, &a.band);
    set(&mut cfg.distill.budget, &a.budget);
    set(&mut cfg.distill.batch, &a.batch);
    set(&mut cfg.distill.delta, &a.delta);
    set(&mut cfg.distill.seed, &a.seed);
    set(&mut cfg.distill.parallelism, &a.parallelism);
    cfg.distill.intersect_updates |= a.intersect_updates;
    set(&mut cfg.oracle.prompt, &a.prompt);
    set_opt(&mut cfg.oracle.replay, &a.replay);
    set(&mut cfg.oracle.sim_keywords, &a.sim_keywords);
    set(&mut cfg.oracle.sim_noise, &a.sim_noise);
    set_opt(&mut cfg.oracle.endpoint, &a.endpoint);
    set_opt(&mut cfg.oracle.model, &a.model);
    set(&mut cfg.oracle.micro_usd_per_query, &a.rate_micro_usd);
    set(&mut cfg.scorer.feature_dim, &a.feature_dim);
    set(&mut cfg.scorer.hash_seed, &a.hash_seed);
    set(&mut cfg.scorer.focal_gamma, &a.focal_gamma);
    set_opt(&mut cfg.scorer.focal_alpha, &a.focal_alpha);
    set(&mut cfg.scorer.learning_rate, &a.learning_rate);
    set(&mut cfg.scorer.epochs, &a.epochs);
    set_opt(&mut cfg.out, &a.out);
}

fn load_instance(path: &Path) -> Result<SyntheticInstance> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let raw: SyntheticInstance =
        serde_json::from_str(&text).map_err(|e| UsageError(format!("invalid instance {}: {e}", path.display())))?;
    SyntheticInstance::new(raw.scores, raw.eta, raw.seed)
        .map_err(|e| UsageError(format!("invalid instance {}: {e}", path.display())).into())
}

/// Seed of the simulated oracle of an instance run, kept apart from the
/// stream's shuffle seed.
fn instance_oracle_seed(seed: u64) -> u64 {
    seed ^ 0x5eed_0f0a_c1e0_0001
}

pub fn distill(args: &DistillArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    apply_flags(&mut cfg, args);
    cfg.validate()?;
    let kind = cfg.oracle_kind()?;
    let out = cfg.out.clone().expect("validated");
    if let Some(s) = &cfg.input.store {
        require_store(s)?;
    }
    if let Some(i) = &cfg.input.instance {
        require_file(i, "instance")?;
    }
    if let Some(r) = cfg.oracle.replay.as_ref().filter(|_| kind == OracleKind::Replay) {
        require_file(r, "replay file")?;
    }
    let token = std::env::var("SIEVE_LLM_TOKEN").ok().filter(|t| !t.is_empty());

    let echo = cfg.to_toml();
    let occupied = RUN_FILES.iter().any(|f| out.join(f).exists());
    if args.resume {
        match fs::read_to_string(out.join(RUN_CONFIG_FILE)) {
            Ok(prev) if prev == echo => {}
            Ok(_) => usage!(
                "{} was written by a run with a different configuration; resume with --config {}",
                out.display(),
                out.join(RUN_CONFIG_FILE).display()
            ),
            Err(_) => usage!("nothing to resume in {}", out.display()),
        }
    } else if occupied {
        if !args.force {
            usage!(
                "{} already holds a run; pass --force to overwrite it or --resume to continue it",
                out.display()
            );
        }
        for f in RUN_FILES {
            remove_if_present(&out.join(f))?;
        }
    }
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join(RUN_CONFIG_FILE), &echo).context("writing run config")?;

    let control = RunControl {
        stop_before_position: args.stop_at,
    };
    let summary = if let Some(path) = &cfg.input.instance {
        let instance = load_instance(path)?;
        let config = cfg.distill_config(instance.n() as u64)?;
        let oracle = instance
            .oracle(instance_oracle_seed(cfg.distill.seed))?
            .with_cost(cfg.oracle.micro_usd_per_query);
        distill_to_dir(
            &config,
            instance.stream(cfg.distill.seed),
            &oracle,
            &PassthroughScorer,
            &out,
            args.resume,
            control,
            |_| None,
        )?
    } else {
        let store = SnippetStore::open(cfg.input.store.as_deref().expect("validated"))?;
        if store.is_empty() {
            usage!("store {} is empty", store.dir().display());
        }
        let config = cfg.distill_config(store.len() as u64)?;
        let oracle: Box<dyn Oracle> = match kind {
            OracleKind::Replay => {
                let path = cfg.oracle.replay.as_deref().expect("validated");
                Box::new(ReplayOracle::new(Arc::new(ReplayStore::open(path)?)))
            }
            OracleKind::Sim => {
                let inner = KeywordOracle::new(&cfg.oracle.sim_keywords, cfg.oracle.sim_noise, cfg.distill.seed)?
                    .with_cost(cfg.oracle.micro_usd_per_query);
                Box::new(CachedOracle::new(inner, Arc::new(ReplayStore::open(&out.join(REPLAY_FILE))?)))
            }
            OracleKind::Llm => {
                let client = LlmClient::new(cfg.llm_config(token)?)?;
                let inner = LlmOracle::new(client, cfg.template()?)?;
                Box::new(CachedOracle::new(inner, Arc::new(ReplayStore::open(&out.join(REPLAY_FILE))?)))
            }
        };
        distill_store(
            &StoreRun {
                config: &config,
                store: &store,
                shuffle_seed: cfg.distill.seed,
                space: cfg.space()?,
                train: cfg.train_config()?,
                out_dir: &out,
                resume: args.resume,
                control,
            },
            &oracle,
        )?
    };
    print_summary(&out, &summary);
    if summary.labeled == 0 && summary.oracle_failures > 0 {
        anyhow::bail!(
            "every oracle call failed ({} failures); see the log and {}",
            summary.oracle_failures,
            out.join(METRICS_FILE).display()
        );
    }
    Ok(())
}

fn status_text(s: &RunStatus) -> String {
    match s {
        RunStatus::Completed => "completed".into(),
        RunStatus::StreamExhausted => "stream exhausted".into(),
        RunStatus::Interrupted { next_position } => format!("interrupted before position {next_position}"),
    }
}

fn print_summary(out: &Path, s: &RunSummary) {
    println!(
        "{}: {} ({}), consumed {}, labeled {} (minority fraction {:.3}, lambda {:.3}), {} queries, ${}, {} oracle failures",
        out.display(),
        status_text(&s.status),
        s.strategy,
        s.consumed,
        s.labeled,
        s.minority_fraction,
        s.queried_lambda,
        s.queries,
        format_usd(s.cost_micro_usd),
        s.oracle_failures
    );
}

// ---------------------------------------------------------------- filter

pub fn filter(args: &FilterArgs) -> Result<()> {
    require_store(&args.store)?;
    require_file(&args.model, "model")?;
    if !(0.0..=1.0).contains(&args.threshold) {
        usage!("--threshold {} is outside [0, 1]", args.threshold);
    }
    if args.workers == Some(0) {
        usage!("--workers must be positive");
    }
    let outputs = [args.out.join(PASS_IDS_FILE), args.out.join(FILTER_SUMMARY_FILE)];
    if outputs.iter().any(|p| p.exists()) && !args.force {
        usage!("{} already holds filter output; pass --force to overwrite it", args.out.display());
    }
    let text = fs::read_to_string(&args.model).with_context(|| format!("reading {}", args.model.display()))?;
    let params = ScorerParams::from_model_str(&text)
        .map_err(|e| UsageError(format!("invalid model {}: {e}", args.model.display())))?;
    let store = SnippetStore::open(&args.store)?;
    let workers = args
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let out = apply_filter(&params, &store, args.threshold, workers)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_filter_output(&args.out, &out)?;
    println!(
        "passed {} of {} snippets (threshold {}, scorer {})",
        out.passed,
        out.passed + out.failed,
        out.threshold_used,
        &out.scorer_version[..12]
    );
    Ok(())
}

// ---------------------------------------------------------------- simulate

const SUITE_FILES: [(Suite, &[&str]); 6] = [
    (Suite::Instance, &["instance.json"]),
    (Suite::Coverage, &["coverage.csv"]),
    (Suite::Shrinkage, &["shrinkage.csv"]),
    (Suite::Balance, &["balance.csv"]),
    (Suite::Certificate, &["certificate.csv"]),
    (Suite::Compare, &["curves.csv", "curves_summary.csv"]),
];

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    let suites: Vec<Suite> = match args.suite {
        Suite::All => SUITE_FILES.iter().map(|(s, _)| *s).collect(),
        s => vec![s],
    };
    if !(args.delta > 0.0 && args.delta < 1.0) {
        usage!("--delta {} is outside (0, 1)", args.delta);
    }
    if args.batch == 0 || args.budget == 0 || !args.budget.is_multiple_of(args.batch) {
        usage!("--budget {} must be a positive multiple of --batch {}", args.budget, args.batch);
    }
    if args.runs == 0 || args.seeds == 0 {
        usage!("--runs and --seeds must be positive");
    }
    if let Some(i) = &args.instance {
        require_file(i, "instance")?;
    }
    let targets: Vec<PathBuf> = SUITE_FILES
        .iter()
        .filter(|(s, _)| suites.contains(s))
        .flat_map(|(_, files)| files.iter().map(|f| args.out.join(f)))
        .collect();
    if targets.iter().any(|p| p.exists()) && !args.force {
        usage!("{} already holds simulation output; pass --force to overwrite it", args.out.display());
    }
    let instance = match &args.instance {
        Some(path) => load_instance(path)?,
        None => generate_instance(args.n, args.prior, args.smoothness, args.instance_seed)
            .map_err(|e| UsageError(format!("cannot generate instance: {e}")))?,
    };
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let seeds: Vec<u64> = (0..args.seeds).map(|k| args.seed + k).collect();
    for suite in suites {
        match suite {
            Suite::Instance => suite_instance(args, &instance)?,
            Suite::Coverage => suite_coverage(args, &instance)?,
            Suite::Shrinkage => suite_shrinkage(args, &instance, &seeds)?,
            Suite::Balance => suite_balance(args, &instance, &seeds)?,
            Suite::Certificate => suite_certificate(args, &instance)?,
            Suite::Compare => suite_compare(args, &seeds)?,
            Suite::All => unreachable!("expanded above"),
        }
    }
    Ok(())
}

fn suite_instance(args: &SimulateArgs, instance: &SyntheticInstance) -> Result<()> {
    let path = args.out.join("instance.json");
    pipeline::write_json(&path, instance)?;
    let smooth = measure_smoothness(instance);
    println!(
        "instance: n {}, prior {:.4}, smoothness {:.3e}, s* {:.4}, expected lambda {:.4} -> {}",
        instance.n(),
        instance.prior(),
        smooth.l_value,
        instance.trm()?.threshold,
        instance.expected_lambda(),
        path.display()
    );
    Ok(())
}

fn suite_coverage(args: &SimulateArgs, instance: &SyntheticInstance) -> Result<()> {
    let cfg = CoverageConfig::new(args.delta, args.runs, args.budget, args.batch, args.seed);
    let r = coverage_experiment(instance, &cfg)?;
    let mut w = csv_writer(&args.out.join("coverage.csv"))?;
    w.write_record(["delta", "runs", "budget", "batch", "covered", "coverage", "updates", "mean_final_width"])?;
    w.write_record([
        args.delta.to_string(),
        r.runs.to_string(),
        args.budget.to_string(),
        args.batch.to_string(),
        r.covered.to_string(),
        format!("{:.4}", r.coverage),
        r.updates.to_string(),
        format!("{:.6}", r.mean_final_width),
    ])?;
    w.flush()?;
    println!(
        "coverage: {}/{} runs kept s* inside every interval ({:.3}; target {:.2})",
        r.covered,
        r.runs,
        r.coverage,
        1.0 - args.delta
    );
    Ok(())
}

fn suite_shrinkage(args: &SimulateArgs, instance: &SyntheticInstance, seeds: &[u64]) -> Result<()> {
    let checkpoints: Vec<u64> = (2..63)
        .map(|k| 1u64 << k)
        .take_while(|t| *t <= instance.n() as u64 / 2)
        .collect();
    let mut w = csv_writer(&args.out.join("shrinkage.csv"))?;
    w.write_record(["seed", "t", "gap"])?;
    let mut last = Vec::new();
    for &seed in seeds {
        let trace = shrinkage_trace(instance, args.delta, seed, &checkpoints)?;
        for (t, gap) in &trace {
            w.write_record([seed.to_string(), t.to_string(), format!("{gap:.6}")])?;
        }
        last.extend(trace.last().map(|p| p.1));
    }
    w.flush()?;
    last.sort_by(f64::total_cmp);
    println!(
        "shrinkage: median gap {:.4} at t = {} over {} seeds",
        last[last.len() / 2],
        checkpoints.last().copied().unwrap_or(0),
        seeds.len()
    );
    Ok(())
}

fn suite_balance(args: &SimulateArgs, instance: &SyntheticInstance, seeds: &[u64]) -> Result<()> {
    let runs = balance_comparison(
        instance,
        &[Strategy::Sieve, Strategy::Random],
        seeds,
        args.budget,
        args.batch,
        args.delta,
    )?;
    let mut w = csv_writer(&args.out.join("balance.csv"))?;
    for r in &runs {
        w.serialize(r)?;
    }
    w.flush()?;
    for name in ["sieve", "random"] {
        let mine: Vec<f64> = runs.iter().filter(|r| r.strategy == name).map(|r| r.minority_fraction).collect();
        println!(
            "balance: {name} mean minority fraction {:.4} over {} seeds",
            mine.iter().sum::<f64>() / mine.len() as f64,
            mine.len()
        );
    }
    Ok(())
}

/// Checks the balancedness bound on a grid of intervals around the
/// instance's optimal threshold.
fn suite_certificate(args: &SimulateArgs, instance: &SyntheticInstance) -> Result<()> {
    const GRID: usize = 20;
    let table = instance.risk_table()?;
    let smooth = measure_smoothness(instance).l_value;
    let s_star = table.argmin().expect("non-empty instance").0;
    let below: Vec<f64> = table.entries.iter().map(|e| e.0).filter(|s| *s < s_star).collect();
    let above: Vec<f64> = table.entries.iter().map(|e| e.0).filter(|s| *s > s_star).collect();
    let pick = |v: &[f64], k: usize| v[(k * v.len()) / GRID];
    let mut w = csv_writer(&args.out.join("certificate.csv"))?;
    let (mut total, mut held, mut vacuous) = (0, 0, 0);
    if !below.is_empty() && !above.is_empty() {
        for i in 0..GRID {
            for j in 0..GRID {
                let cert = certify(instance, &table, smooth, pick(&below, i), pick(&above, j))?;
                total += 1;
                held += cert.holds() as usize;
                vacuous += cert.vacuous() as usize;
                w.serialize(CertRow {
                    mu_lo: cert.interval.0,
                    mu_hi: cert.interval.1,
                    s_star: cert.s_star,
                    gamma_lo: cert.gamma_lo,
                    gamma_hi: cert.gamma_hi,
                    smoothness: cert.smoothness,
                    lambda_exact: cert.lambda_exact,
                    bound: cert.bound_value,
                    assumptions_hold: cert.assumptions.all(),
                    holds: cert.holds(),
                })?;
            }
        }
    }
    w.flush()?;
    println!("certificate: bound held on {held}/{total} intervals ({vacuous} vacuous)");
    Ok(())
}

#[derive(serde::Serialize)]
struct CertRow {
    mu_lo: f64,
    mu_hi: f64,
    s_star: f64,
    gamma_lo: f64,
    gamma_hi: f64,
    smoothness: f64,
    lambda_exact: f64,
    bound: Option<f64>,
    assumptions_hold: bool,
    holds: bool,
}

fn suite_compare(args: &SimulateArgs, seeds: &[u64]) -> Result<()> {
    let grid: Vec<usize> = (0..)
        .map(|k| args.batch << k)
        .take_while(|b| *b <= args.budget)
        .collect();
    let task = GaussianTask::reference(args.seed);
    let curves = run_comparison(&task, &[Strategy::Sieve, Strategy::Random], &grid, seeds, args.batch)?;
    curves.write_csv(fs::File::create(args.out.join("curves.csv"))?)?;
    curves.write_summary_csv(fs::File::create(args.out.join("curves_summary.csv"))?)?;
    println!("{:<8} {:>7} {:>9} {:>9} {:>9}", "strategy", "queries", "bal_acc", "stderr", "minority");
    for s in curves.summary() {
        println!(
            "{:<8} {:>7} {:>9.4} {:>9.4} {:>9.4}",
            s.strategy, s.budget, s.mean_bal_acc, s.stderr_bal_acc, s.mean_minority_fraction
        );
    }
    Ok(())
}

// ---------------------------------------------------------------- report

#[derive(Deserialize)]
struct HeldOut {
    id: SnippetId,
    label: Label,
}

/// Balanced accuracy of "class 0 iff score ≤ threshold" in expectation
/// over an instance's labels.
fn expected_balanced_accuracy(instance: &SyntheticInstance, threshold: f64) -> f64 {
    let (mut zero_hit, mut zero_total, mut one_hit, mut one_total) = (0.0, 0.0, 0.0, 0.0);
    for (s, eta) in instance.scores.iter().zip(&instance.eta) {
        zero_total += eta;
        one_total += 1.0 - eta;
        if *s <= threshold {
            zero_hit += eta;
        } else {
            one_hit += 1.0 - eta;
        }
    }
    let recalls: Vec<f64> = [(zero_hit, zero_total), (one_hit, one_total)]
        .iter()
        .filter(|(_, t)| *t > 0.0)
        .map(|(h, t)| h / t)
        .collect();
    recalls.iter().sum::<f64>() / recalls.len() as f64
}

/// Fits the best threshold to a fixed-score run's labeled set and scores
/// it against the instance's labels; `None` when nothing was labeled.
fn labeled_threshold_accuracy(run: &Path, instance: &SyntheticInstance) -> Result<Option<f64>> {
    let path = run.join(LABELED_FILE);
    require_file(&path, "run artifact")?;
    let set = pipeline::load_labeled_set(&path)?;
    if set.is_empty() {
        return Ok(None);
    }
    let mut scores = Vec::with_capacity(set.len());
    let mut zero = Vec::with_capacity(set.len());
    for r in set.records() {
        let Some(&s) = instance.scores.get(r.snippet_id as usize) else {
            usage!("{} labels snippet {} which is not in the instance", path.display(), r.snippet_id);
        };
        scores.push(s);
        zero.push(if r.label == Label::Zero { 1.0 } else { 0.0 });
    }
    let fit = compute_trm_exact(&scores, &zero)?;
    Ok(Some(expected_balanced_accuracy(instance, fit.threshold)))
}

fn held_out_accuracy(run: &Path, store_dir: &Path, labels: &HashMap<SnippetId, Label>, threshold: f64) -> Result<f64> {
    let model_path = run.join(MODEL_FILE);
    require_file(&model_path, "model")?;
    let params = ScorerParams::from_model_str(&fs::read_to_string(&model_path)?)?;
    require_store(store_dir)?;
    let store = SnippetStore::open(store_dir)?;
    let (mut predicted, mut truth) = (Vec::new(), Vec::new());
    for s in store.snippets()? {
        if let Some(&y) = labels.get(&s.id) {
            let score = sieve_core::scorer::score(&params, &params.space.featurize_text(&s.text)?)?;
            predicted.push(Label::from_bool(score > threshold));
            truth.push(y);
        }
    }
    if truth.is_empty() {
        usage!("none of the held-out ids are in {}", store_dir.display());
    }
    Ok(balanced_accuracy(&predicted, &truth))
}

struct ReportRow {
    name: String,
    strategy: String,
    status: String,
    queries: u64,
    lambda: f64,
    accuracy: Option<f64>,
    rate_micro_usd: u64,
}

pub fn report(args: &ReportArgs) -> Result<()> {
    let labels: Option<HashMap<SnippetId, Label>> = match &args.eval_labels {
        Some(path) => {
            require_file(path, "held-out labels")?;
            let read = sieve_core::jsonl::load_jsonl::<HeldOut>(path)
                .map_err(|e| UsageError(format!("invalid held-out labels: {e}")))?;
            Some(read.records.into_iter().map(|r| (r.id, r.label)).collect())
        }
        None => None,
    };
    if let Some(g) = args.gpu_hours {
        if !(g >= 0.0 && args.gpu_usd_per_hour >= 0.0) {
            usage!("--gpu-hours and --gpu-usd-per-hour must be non-negative");
        }
    }
    let mut rows = Vec::new();
    for run in &args.runs {
        for f in [RUN_CONFIG_FILE, SUMMARY_FILE, LEDGER_FILE] {
            require_file(&run.join(f), "run artifact")?;
        }
        let cfg = RunConfig::load(&run.join(RUN_CONFIG_FILE))?;
        let summary: RunSummary = serde_json::from_str(&fs::read_to_string(run.join(SUMMARY_FILE))?)
            .with_context(|| format!("parsing {}", run.join(SUMMARY_FILE).display()))?;
        let ledger: LedgerFile = serde_json::from_str(&fs::read_to_string(run.join(LEDGER_FILE))?)
            .with_context(|| format!("parsing {}", run.join(LEDGER_FILE).display()))?;
        let accuracy = if let Some(path) = &cfg.input.instance {
            labeled_threshold_accuracy(run, &load_instance(path)?)?
        } else if let (Some(labels), Some(store)) = (&labels, args.store.as_ref().or(cfg.input.store.as_ref())) {
            Some(held_out_accuracy(run, store, labels, args.threshold)?)
        } else {
            None
        };
        rows.push(ReportRow {
            name: run.display().to_string(),
            strategy: summary.strategy.clone(),
            status: status_text(&summary.status),
            queries: ledger.total_queries,
            lambda: summary.queried_lambda,
            accuracy,
            rate_micro_usd: cfg.oracle.micro_usd_per_query,
        });
    }
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(3).max(3);
    println!(
        "{:<width$}  {:<11}  {:>8}  {:>8}  {:>8}  {:>10}  status",
        "run", "strategy", "queries", "lambda", "accuracy", "cost_usd"
    );
    for r in &rows {
        println!(
            "{:<width$}  {:<11}  {:>8}  {:>8.3}  {:>8}  {:>10}  {}",
            r.name,
            r.strategy,
            r.queries,
            r.lambda,
            r.accuracy.map_or("-".to_string(), |a| format!("{a:.4}")),
            format_usd(r.queries * r.rate_micro_usd),
            r.status
        );
    }
    println!();
    let mut total = 0u64;
    for r in &rows {
        let cost = r.queries * r.rate_micro_usd;
        total += cost;
        println!(
            "oracle cost {}: {} queries x ${}/query = ${}",
            r.name,
            r.queries,
            r.rate_micro_usd as f64 / 1e6,
            format_usd(cost)
        );
    }
    if let Some(hours) = args.gpu_hours {
        let micro = (hours * args.gpu_usd_per_hour * 1e6).round() as u64;
        println!(
            "compute cost: {hours} hours x ${}/hour = ${}",
            args.gpu_usd_per_hour,
            format_usd(micro)
        );
        total += micro;
    }
    println!("total cost: ${}", format_usd(total));
    Ok(())
}
