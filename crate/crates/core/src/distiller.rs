//! Stream-based class-balancing active distillation.
//!
//! The first `B` stream items are labeled unconditionally. Each later round
//! refits the scorer from scratch on everything labeled so far, resets the
//! confidence interval to `[0, 1]`, and walks the stream querying only items
//! whose score falls inside the interval until `B` new labels arrive. The
//! interval is recomputed whenever the round's window counter `t` reaches a
//! power of two. Random and uncertainty-band baselines share the same loop.

use std::collections::{HashMap, HashSet, VecDeque};
use std::sync::mpsc;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::{imbalance_ratio, Label};
use crate::oracle::{CostLedger, Oracle, OracleError, OracleResponse, MICRO_USD_PER_USD};
use crate::scorer::{FeatureVector, Scorer, ScorerError, ScorerFactory};
use crate::snippet::{sha256_hex, Snippet, SnippetId, StreamItem};
use crate::trm::{
    confidence_radius, update_confidence_interval, ConfidenceInterval, ScoredWindow, TrmError,
};

#[derive(Debug, Error)]
pub enum DistillError {
    #[error("invalid distillation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Trm(#[from] TrmError),
    #[error(transparent)]
    Scorer(#[from] ScorerError),
    #[error("fatal oracle error: {0}")]
    Oracle(#[from] OracleError),
    #[error("duplicate snippet {0} in the labeled set")]
    DuplicateSnippet(SnippetId),
    #[error("observer failed: {0}")]
    Observer(String),
    #[error("oracle workers stopped unexpectedly")]
    WorkersGone,
}

pub type Result<T> = std::result::Result<T, DistillError>;

/// Which arriving items are sent to the oracle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    /// Query scores inside the live confidence interval.
    Sieve,
    /// Query every arriving item (the stream is pre-shuffled).
    Random,
    /// Query iff `|score - 0.5| <= band`; falls back to unconditional
    /// queries once the rest of the stream is only just enough to fill the
    /// round.
    Uncertainty { band: f64 },
}

impl Strategy {
    pub const DEFAULT_BAND: f64 = 0.1;

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Sieve => "sieve",
            Strategy::Random => "random",
            Strategy::Uncertainty { .. } => "uncertainty",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    /// `B`: labels per round.
    pub batch_size: usize,
    /// `T`: total labels, a multiple of `B`.
    pub total_budget: usize,
    /// `δ` in the confidence radius.
    pub delta: f64,
    /// `N` in the confidence radius; also used by the uncertainty fallback.
    pub stream_length: u64,
    pub strategy: Strategy,
    /// Maximum concurrent oracle calls.
    pub parallelism: usize,
    /// Intersect each recomputed interval with the previous one.
    pub intersect_updates: bool,
    /// Smallest window counter at which the interval is recomputed.
    pub first_update_t: u64,
}

impl DistillConfig {
    pub fn new(batch_size: usize, total_budget: usize, stream_length: u64) -> Self {
        DistillConfig {
            batch_size,
            total_budget,
            delta: 0.1,
            stream_length,
            strategy: Strategy::Sieve,
            parallelism: crate::oracle::DEFAULT_PARALLELISM,
            intersect_updates: false,
            first_update_t: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DistillError::InvalidConfig(m));
        if self.batch_size == 0 {
            return bad("batch size must be >= 1".into());
        }
        if self.total_budget < self.batch_size || !self.total_budget.is_multiple_of(self.batch_size) {
            return bad(format!(
                "budget {} must be a positive multiple of batch size {}",
                self.total_budget, self.batch_size
            ));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta {} must lie in (0, 1)", self.delta));
        }
        if self.stream_length == 0 {
            return bad("stream length must be >= 1".into());
        }
        if self.parallelism == 0 {
            return bad("parallelism must be >= 1".into());
        }
        if self.first_update_t == 0 {
            return bad("first update time must be >= 1".into());
        }
        if let Strategy::Uncertainty { band } = self.strategy {
            if !(0.0..=0.5).contains(&band) {
                return bad(format!("uncertainty band {band} must lie in [0, 0.5]"));
            }
        }
        Ok(())
    }

    pub fn rounds(&self) -> usize {
        self.total_budget / self.batch_size
    }
}

/// Query rule of the sieve strategy: closed-interval membership.
pub fn should_query(score: f64, ci: &ConfidenceInterval) -> bool {
    ci.contains(score)
}

/// One oracle-labeled snippet.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledRecord {
    pub snippet_id: SnippetId,
    pub label: Label,
    /// 0 for the initial batch.
    pub round: u32,
    /// Stream position (0-based).
    pub position: u64,
    /// Score under the round's scorer; absent for the initial batch.
    pub score: Option<f64>,
    pub raw_sha256: Option<String>,
    pub latency_ms: u64,
    pub cost_micro_usd: u64,
}

/// The growing labeled set, kept in stream-position order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabeledSet {
    records: Vec<LabeledRecord>,
    ids: HashSet<SnippetId>,
}

impl LabeledSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records(records: Vec<LabeledRecord>) -> Result<Self> {
        let mut set = LabeledSet::new();
        for r in records {
            set.push(r)?;
        }
        Ok(set)
    }

    pub fn push(&mut self, record: LabeledRecord) -> Result<()> {
        if !self.ids.insert(record.snippet_id) {
            return Err(DistillError::DuplicateSnippet(record.snippet_id));
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[LabeledRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn contains(&self, id: SnippetId) -> bool {
        self.ids.contains(&id)
    }

    pub fn labels(&self) -> Vec<Label> {
        self.records.iter().map(|r| r.label).collect()
    }

    /// Fraction of records carrying `class`.
    pub fn class_fraction(&self, class: Label) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        let n = self.records.iter().filter(|r| r.label == class).count();
        n as f64 / self.records.len() as f64
    }

    /// Minority/majority ratio of the queried labels.
    pub fn imbalance(&self) -> f64 {
        imbalance_ratio(&self.labels()).lambda
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Init,
    Query,
    Skip,
    CiUpdate,
    RoundEnd,
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsEvent {
    pub event: EventKind,
    /// Window counter of the round, when a window exists.
    pub t: Option<u64>,
    /// Stream position of the item (or of the stream head for round and
    /// update events).
    pub j: u64,
    pub r: u32,
    pub score: Option<f64>,
    pub label: Option<Label>,
    pub mu_lo: f64,
    pub mu_hi: f64,
    pub beta: Option<f64>,
    pub s_hat: Option<f64>,
    pub labeled_count: usize,
    pub cost_usd: f64,
    pub reason: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CiUpdate {
    pub round: u32,
    pub t: u64,
    pub ci: ConfidenceInterval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    /// The stream ended before the budget was spent; the model is fit on
    /// the partial labeled set.
    StreamExhausted,
    /// Stopped on request before consuming `next_position`.
    Interrupted { next_position: u64 },
}

pub struct DistillOutcome<M> {
    /// Scorer fit on the final labeled set; `None` when interrupted or when
    /// nothing could be labeled.
    pub model: Option<M>,
    pub labeled: LabeledSet,
    pub ledger: CostLedger,
    pub status: RunStatus,
    pub ci_updates: Vec<CiUpdate>,
    /// Stream items consumed.
    pub consumed: u64,
    /// Empirical risk minimizer at the last interval update.
    pub last_estimate: Option<f64>,
    pub oracle_failures: u64,
}

/// Receives progress in deterministic stream-position order.
pub trait DistillObserver<M> {
    fn on_event(&mut self, _event: &MetricsEvent) -> std::result::Result<(), String> {
        Ok(())
    }

    fn on_record(&mut self, _record: &LabeledRecord) -> std::result::Result<(), String> {
        Ok(())
    }

    /// Called after every fit with the round it serves (`rounds()` for the
    /// final fit) and the number of labels it saw.
    fn on_fit(&mut self, _round: u32, _labeled: usize, _model: &M) {}
}

/// Observer that ignores everything.
pub struct NoopObserver;

impl<M> DistillObserver<M> for NoopObserver {}

/// Collects the metrics log in memory.
#[derive(Debug, Default)]
pub struct MetricsLog {
    pub events: Vec<MetricsEvent>,
}

impl<M> DistillObserver<M> for MetricsLog {
    fn on_event(&mut self, event: &MetricsEvent) -> std::result::Result<(), String> {
        self.events.push(event.clone());
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunControl {
    /// Stop before consuming this stream position (simulates a crash at a
    /// known cursor).
    pub stop_before_position: Option<u64>,
}

/// Whether an oracle error skips the item (logged) or aborts the run.
fn skippable(e: &OracleError) -> bool {
    matches!(
        e,
        OracleError::OracleUnavailable { .. }
            | OracleError::HttpStatus { .. }
            | OracleError::UnparseableVerdict { .. }
    )
}

struct Job {
    position: u64,
    snippet: Snippet,
}

struct Done {
    position: u64,
    result: std::result::Result<OracleResponse, OracleError>,
}

struct Pending {
    snippet_id: SnippetId,
    features: FeatureVector,
    score: Option<f64>,
    window_index: Option<usize>,
    ci: ConfidenceInterval,
    t: Option<u64>,
    initial: bool,
    reason: Option<&'static str>,
}

struct SkipNote {
    position: u64,
    t: Option<u64>,
    score: f64,
    label: Option<Label>,
    ci: ConfidenceInterval,
    reason: String,
}

enum Slot {
    Skip(SkipNote),
    Query(u64),
}

struct Engine<'a, M> {
    config: &'a DistillConfig,
    observer: &'a mut dyn DistillObserver<M>,
    job_tx: Option<mpsc::Sender<Job>>,
    done_rx: mpsc::Receiver<Done>,
    labeled: LabeledSet,
    examples: Vec<(FeatureVector, Label)>,
    ledger: CostLedger,
    round: u32,
    ci: ConfidenceInterval,
    window: Option<ScoredWindow>,
    slots: VecDeque<Slot>,
    pending: HashMap<u64, Pending>,
    completed: HashMap<u64, std::result::Result<OracleResponse, OracleError>>,
    inflight: usize,
    /// Dispatched queries neither committed nor known to have failed.
    outstanding_ok: usize,
    position: u64,
    ci_updates: Vec<CiUpdate>,
    last_estimate: Option<f64>,
    failures: u64,
}

impl<'a, M> Engine<'a, M> {
    fn cost_usd(&self) -> f64 {
        self.ledger.total_micro_usd() as f64 / MICRO_USD_PER_USD as f64
    }

    fn event(&self, event: EventKind, t: Option<u64>, j: u64, ci: &ConfidenceInterval) -> MetricsEvent {
        MetricsEvent {
            event,
            t,
            j,
            r: self.round,
            score: None,
            label: None,
            mu_lo: ci.lower,
            mu_hi: ci.upper,
            beta: None,
            s_hat: None,
            labeled_count: self.labeled.len(),
            cost_usd: self.cost_usd(),
            reason: None,
        }
    }

    fn emit(&mut self, event: MetricsEvent) -> Result<()> {
        self.observer.on_event(&event).map_err(DistillError::Observer)
    }

    fn dispatch(&mut self, item: StreamItem, position: u64, p: Pending) -> Result<()> {
        while self.inflight >= self.config.parallelism {
            self.wait_one()?;
        }
        self.pending.insert(position, p);
        self.slots.push_back(Slot::Query(position));
        self.job_tx
            .as_ref()
            .expect("job channel open")
            .send(Job {
                position,
                snippet: item.snippet,
            })
            .map_err(|_| DistillError::WorkersGone)?;
        self.inflight += 1;
        self.outstanding_ok += 1;
        Ok(())
    }

    fn skip(&mut self, note: SkipNote) -> Result<()> {
        self.slots.push_back(Slot::Skip(note));
        self.flush()
    }

    fn wait_one(&mut self) -> Result<()> {
        let done = self.done_rx.recv().map_err(|_| DistillError::WorkersGone)?;
        self.inflight -= 1;
        if done.result.is_err() {
            self.outstanding_ok -= 1;
        }
        self.completed.insert(done.position, done.result);
        self.flush()
    }

    fn drain(&mut self) -> Result<()> {
        while self.inflight > 0 {
            self.wait_one()?;
        }
        self.flush()
    }

    /// Commits finished work in stream-position order.
    fn flush(&mut self) -> Result<()> {
        loop {
            match self.slots.front() {
                None => return Ok(()),
                Some(Slot::Skip(_)) => {
                    let Some(Slot::Skip(note)) = self.slots.pop_front() else {
                        unreachable!()
                    };
                    let mut ev = self.event(EventKind::Skip, note.t, note.position, &note.ci);
                    ev.score = Some(note.score);
                    ev.label = note.label;
                    ev.reason = Some(note.reason);
                    self.emit(ev)?;
                }
                Some(Slot::Query(pos)) => {
                    let pos = *pos;
                    let Some(result) = self.completed.remove(&pos) else {
                        return Ok(());
                    };
                    self.slots.pop_front();
                    let p = self.pending.remove(&pos).expect("pending query");
                    self.commit(pos, p, result)?;
                }
            }
        }
    }

    fn commit(
        &mut self,
        position: u64,
        p: Pending,
        result: std::result::Result<OracleResponse, OracleError>,
    ) -> Result<()> {
        match result {
            Ok(resp) => {
                self.outstanding_ok -= 1;
                if let (Some(w), Some(i)) = (self.window.as_mut(), p.window_index) {
                    w.set_label(i, resp.label);
                }
                self.ledger.record(self.round, resp.cost_micro_usd);
                let record = LabeledRecord {
                    snippet_id: p.snippet_id,
                    label: resp.label,
                    round: self.round,
                    position,
                    score: p.score,
                    raw_sha256: resp.raw_text.as_deref().map(sha256_hex),
                    latency_ms: resp.latency_ms,
                    cost_micro_usd: resp.cost_micro_usd,
                };
                self.labeled.push(record.clone())?;
                self.examples.push((p.features, resp.label));
                self.observer
                    .on_record(&record)
                    .map_err(DistillError::Observer)?;
                let kind = if p.initial {
                    EventKind::Init
                } else {
                    EventKind::Query
                };
                let mut ev = self.event(kind, p.t, position, &p.ci);
                ev.score = p.score;
                ev.label = Some(resp.label);
                ev.reason = p.reason.map(str::to_owned);
                self.emit(ev)
            }
            Err(e) if skippable(&e) => {
                log::warn!("skipping snippet {} at position {position}: {e}", p.snippet_id);
                self.failures += 1;
                if e.cost_micro_usd() > 0 {
                    self.ledger.record(self.round, e.cost_micro_usd());
                }
                if let (Some(w), Some(i)) = (self.window.as_mut(), p.window_index) {
                    w.mark_failed(i);
                }
                self.skip(SkipNote {
                    position,
                    t: p.t,
                    score: p.score.unwrap_or(f64::NAN),
                    label: None,
                    ci: p.ci,
                    reason: format!("oracle_error: {e}"),
                })
            }
            Err(e) => Err(e.into()),
        }
    }

    fn update_interval(&mut self) -> Result<()> {
        let window = self.window.as_ref().expect("sieve window");
        let t = window.t().expect("non-empty window");
        if window.usable_len() == 0 {
            log::warn!("round {}: no usable window entries at t={t}; interval kept", self.round);
            return Ok(());
        }
        let beta = confidence_radius(t + 1, self.config.stream_length, self.config.delta)?;
        let fresh = update_confidence_interval(window, &self.ci, beta)?;
        let next = if self.config.intersect_updates {
            match self.ci.intersect(&fresh) {
                Some(ci) => ci,
                None => {
                    log::warn!("round {}: disjoint interval update at t={t}", self.round);
                    fresh
                }
            }
        } else {
            fresh
        };
        self.ci = next;
        self.last_estimate = next.estimate;
        self.ci_updates.push(CiUpdate {
            round: self.round,
            t,
            ci: next,
        });
        let mut ev = self.event(EventKind::CiUpdate, Some(t), window.start_index() + t, &next);
        ev.beta = Some(beta);
        ev.s_hat = next.estimate;
        self.emit(ev)
    }
}

enum Fill {
    Done,
    Exhausted,
    Interrupted,
}

/// Runs the distillation loop over `stream`.
///
/// Oracle calls run on `config.parallelism` worker threads; everything the
/// observer sees, and the labeled set itself, is committed in stream order,
/// so results do not depend on thread timing.
pub fn run_distillation<I, O, F>(
    config: &DistillConfig,
    stream: I,
    oracle: &O,
    factory: &F,
    control: RunControl,
    observer: &mut dyn DistillObserver<F::Model>,
) -> Result<DistillOutcome<F::Model>>
where
    I: IntoIterator<Item = StreamItem>,
    O: Oracle + ?Sized,
    F: ScorerFactory,
{
    config.validate()?;
    let mut stream = stream.into_iter();
    let (job_tx, job_rx) = mpsc::channel::<Job>();
    let job_rx = Mutex::new(job_rx);
    let (done_tx, done_rx) = mpsc::channel::<Done>();
    std::thread::scope(|scope| {
        for _ in 0..config.parallelism {
            let job_rx = &job_rx;
            let done_tx = done_tx.clone();
            scope.spawn(move || loop {
                let job = match job_rx.lock() {
                    Ok(rx) => rx.recv(),
                    Err(_) => return,
                };
                let Ok(job) = job else { return };
                let result = oracle.label(&job.snippet);
                if done_tx
                    .send(Done {
                        position: job.position,
                        result,
                    })
                    .is_err()
                {
                    return;
                }
            });
        }
        drop(done_tx);

        let mut engine = Engine {
            config,
            observer,
            job_tx: Some(job_tx),
            done_rx,
            labeled: LabeledSet::new(),
            examples: Vec::new(),
            ledger: CostLedger::new(),
            round: 0,
            ci: ConfidenceInterval::full(),
            window: None,
            slots: VecDeque::new(),
            pending: HashMap::new(),
            completed: HashMap::new(),
            inflight: 0,
            outstanding_ok: 0,
            position: 0,
            ci_updates: Vec::new(),
            last_estimate: None,
            failures: 0,
        };
        let result = drive(&mut engine, &mut stream, factory, control);
        // Closing the job channel lets the workers exit.
        engine.job_tx = None;
        if result.is_err() {
            while engine.inflight > 0 && engine.done_rx.recv().is_ok() {
                engine.inflight -= 1;
            }
        }
        let (model, status) = result?;
        Ok(DistillOutcome {
            model,
            labeled: engine.labeled,
            ledger: engine.ledger,
            status,
            ci_updates: engine.ci_updates,
            consumed: engine.position,
            last_estimate: engine.last_estimate,
            oracle_failures: engine.failures,
        })
    })
}

fn drive<M: Scorer, F: ScorerFactory<Model = M>>(
    engine: &mut Engine<'_, M>,
    stream: &mut dyn Iterator<Item = StreamItem>,
    factory: &F,
    control: RunControl,
) -> Result<(Option<M>, RunStatus)> {
    let config = engine.config;
    let b = config.batch_size;

    // Initial batch: the first B items, unconditionally.
    let fill = fill_round(engine, stream, control, b, |engine, item, position| {
        let p = Pending {
            snippet_id: item.snippet.id,
            features: item.features.clone(),
            score: None,
            window_index: None,
            ci: engine.ci,
            t: None,
            initial: true,
            reason: None,
        };
        engine.dispatch(item, position, p)
    })?;
    let mut status = round_end(engine, &fill)?;

    if matches!(fill, Fill::Done) {
        for r in 1..config.rounds() {
            let model = factory.fit(&engine.examples)?;
            engine.observer.on_fit(r as u32, engine.examples.len(), &model);
            engine.round = r as u32;
            engine.ci = ConfidenceInterval::full();
            engine.window = match config.strategy {
                Strategy::Sieve => Some(ScoredWindow::new(engine.position)),
                _ => None,
            };
            let target = (r + 1) * b;
            let fill = fill_round(engine, stream, control, target, |engine, item, position| {
                let score = model.score(&item.features)?;
                route(engine, item, position, score, target)
            })?;
            status = round_end(engine, &fill)?;
            if !matches!(fill, Fill::Done) {
                break;
            }
        }
    }

    if matches!(status, RunStatus::Interrupted { .. }) || engine.examples.is_empty() {
        return Ok((None, status));
    }
    let model = factory.fit(&engine.examples)?;
    engine
        .observer
        .on_fit(config.rounds() as u32, engine.examples.len(), &model);
    Ok((Some(model), status))
}

fn round_end<M>(engine: &mut Engine<'_, M>, fill: &Fill) -> Result<RunStatus> {
    let status = match fill {
        Fill::Done => RunStatus::Completed,
        Fill::Exhausted => RunStatus::StreamExhausted,
        Fill::Interrupted => RunStatus::Interrupted {
            next_position: engine.position,
        },
    };
    let t = engine.window.as_ref().and_then(ScoredWindow::t);
    let ci = engine.ci;
    let mut ev = engine.event(EventKind::RoundEnd, t, engine.position, &ci);
    ev.s_hat = engine.last_estimate;
    ev.reason = match fill {
        Fill::Done => None,
        Fill::Exhausted => Some("stream_exhausted".into()),
        Fill::Interrupted => Some("interrupted".into()),
    };
    engine.emit(ev)?;
    Ok(status)
}

/// Consumes the stream until `target` labels are committed.
fn fill_round<M>(
    engine: &mut Engine<'_, M>,
    stream: &mut dyn Iterator<Item = StreamItem>,
    control: RunControl,
    target: usize,
    mut on_item: impl FnMut(&mut Engine<'_, M>, StreamItem, u64) -> Result<()>,
) -> Result<Fill> {
    loop {
        if engine.labeled.len() + engine.outstanding_ok >= target {
            engine.drain()?;
            if engine.labeled.len() >= target {
                return Ok(Fill::Done);
            }
            continue;
        }
        if control.stop_before_position == Some(engine.position) {
            engine.drain()?;
            return Ok(Fill::Interrupted);
        }
        let Some(item) = stream.next() else {
            engine.drain()?;
            return Ok(if engine.labeled.len() >= target {
                Fill::Done
            } else {
                Fill::Exhausted
            });
        };
        let position = engine.position;
        engine.position += 1;
        on_item(engine, item, position)?;
    }
}

/// Routes one scored arrival of a refit round according to the strategy.
fn route<M>(
    engine: &mut Engine<'_, M>,
    item: StreamItem,
    position: u64,
    score: f64,
    target: usize,
) -> Result<()> {
    let config = engine.config;
    let mut pending = Pending {
        snippet_id: item.snippet.id,
        features: item.features.clone(),
        score: Some(score),
        window_index: None,
        ci: engine.ci,
        t: None,
        initial: false,
        reason: None,
    };
    match config.strategy {
        Strategy::Sieve => {
            let ci = engine.ci;
            let window = engine.window.as_mut().expect("sieve window");
            if should_query(score, &ci) {
                pending.window_index = Some(window.push_unlabeled(score)?);
                pending.t = window.t();
                engine.dispatch(item, position, pending)?;
            } else {
                let label = window.push_skipped(score, &ci)?;
                let t = window.t();
                engine.skip(SkipNote {
                    position,
                    t,
                    score,
                    label: Some(label),
                    ci,
                    reason: "outside_interval".into(),
                })?;
            }
            let t = engine.window.as_ref().and_then(ScoredWindow::t).unwrap_or(0);
            if t >= config.first_update_t && t.is_power_of_two() {
                engine.drain()?;
                engine.update_interval()?;
            }
            Ok(())
        }
        Strategy::Random => engine.dispatch(item, position, pending),
        Strategy::Uncertainty { band } => {
            let needed = target.saturating_sub(engine.labeled.len() + engine.outstanding_ok) as u64;
            let remaining = config.stream_length.saturating_sub(position);
            if (score - 0.5).abs() <= band {
                engine.dispatch(item, position, pending)
            } else if remaining <= needed {
                log::info!("uncertainty band starved the round; querying position {position} unconditionally");
                pending.reason = Some("fallback");
                engine.dispatch(item, position, pending)
            } else {
                let ci = engine.ci;
                engine.skip(SkipNote {
                    position,
                    t: None,
                    score,
                    label: None,
                    ci,
                    reason: "outside_band".into(),
                })
            }
        }
    }
}
