//! Threshold risk minimization over sigmoid scores.
//!
//! A threshold classifier at `s` assigns class 0 to every score `<= s` and
//! class 1 to every score `> s`. The candidate thresholds are always the
//! finite set `{0} ∪ {observed scores}`. This module holds the true and
//! empirical risk of those classifiers, the true risk minimizer, the
//! confidence radius schedule and the elimination rule that maintains the
//! confidence interval `[lower, upper]` of surviving thresholds.
//!
//! Everything here is a pure function over its inputs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::Label;

#[derive(Debug, Error, PartialEq)]
pub enum TrmError {
    #[error("scores and eta differ in length ({scores} vs {eta})")]
    LengthMismatch { scores: usize, eta: usize },
    #[error("{what}[{index}] = {value} lies outside [0, 1]")]
    OutOfRange {
        what: &'static str,
        index: usize,
        value: f64,
    },
    #[error("threshold {0} lies outside [0, 1]")]
    ThresholdOutOfRange(f64),
    #[error("empty input")]
    Empty,
    #[error(
        "window entry {index} (score {score}) is unlabeled but lies inside [{lower}, {upper}]"
    )]
    UnlabeledInsideInterval {
        index: usize,
        score: f64,
        lower: f64,
        upper: f64,
    },
    #[error("delta must lie in (0, 1), got {0}")]
    InvalidDelta(f64),
    #[error("sample count must be a power of two >= 2, got {0}")]
    NotPowerOfTwo(u64),
    #[error("sample count must be >= 2, got {0}")]
    TooFewSamples(u64),
    #[error("stream length must be >= 1")]
    EmptyStream,
    #[error("confidence radius must be finite and >= 0, got {0}")]
    InvalidRadius(f64),
    #[error("window needs t >= 1 (at least two entries) for an update, has {0} entries")]
    WindowTooShort(usize),
    #[error("interval [{lower}, {upper}] is not ordered inside [0, 1]")]
    InvalidInterval { lower: f64, upper: f64 },
}

pub type Result<T> = std::result::Result<T, TrmError>;

fn check_unit(what: &'static str, index: usize, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(TrmError::OutOfRange { what, index, value })
    }
}

fn check_instance(scores: &[f64], eta: &[f64]) -> Result<()> {
    if scores.len() != eta.len() {
        return Err(TrmError::LengthMismatch {
            scores: scores.len(),
            eta: eta.len(),
        });
    }
    if scores.is_empty() {
        return Err(TrmError::Empty);
    }
    for (i, &s) in scores.iter().enumerate() {
        check_unit("scores", i, s)?;
    }
    for (i, &e) in eta.iter().enumerate() {
        check_unit("eta", i, e)?;
    }
    Ok(())
}

/// Sorted, deduplicated candidate thresholds; `0` is always the first member.
#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdCandidates(Vec<f64>);

impl ThresholdCandidates {
    pub fn from_scores<I: IntoIterator<Item = f64>>(scores: I) -> Self {
        let mut v: Vec<f64> = std::iter::once(0.0).chain(scores).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        ThresholdCandidates(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, s: f64) -> bool {
        self.0.binary_search_by(|c| c.total_cmp(&s)).is_ok()
    }
}

/// Label state of one window entry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EntryLabel {
    /// Oracle label obtained because the score was inside the interval.
    Queried(Label),
    /// Label implied by the interval that was live when the entry arrived.
    Imputed(Label),
    /// Not yet resolved; imputed against whatever interval is passed to the
    /// risk functions.
    Unlabeled,
    /// The oracle failed on this entry. It still counts as an arrival for
    /// the window counter but is excluded from risks and candidates.
    Failed,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindowEntry {
    pub score: f64,
    pub label: EntryLabel,
}

/// The scores seen since the head `start_index` of the current round, in
/// arrival order. With `t + 1` entries the window counter is `t`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoredWindow {
    start_index: u64,
    entries: Vec<WindowEntry>,
}

impl ScoredWindow {
    pub fn new(start_index: u64) -> Self {
        ScoredWindow {
            start_index,
            entries: Vec::new(),
        }
    }

    /// Builds a window with every entry queried.
    pub fn from_labeled(start_index: u64, items: &[(f64, Label)]) -> Result<Self> {
        let mut w = ScoredWindow::new(start_index);
        for &(score, label) in items {
            w.push_queried(score, label)?;
        }
        Ok(w)
    }

    pub fn start_index(&self) -> u64 {
        self.start_index
    }

    pub fn entries(&self) -> &[WindowEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Window counter `t`; `None` while the window is empty.
    pub fn t(&self) -> Option<u64> {
        (self.entries.len() as u64).checked_sub(1)
    }

    fn push(&mut self, score: f64, label: EntryLabel) -> Result<usize> {
        check_unit("score", self.entries.len(), score)?;
        self.entries.push(WindowEntry { score, label });
        Ok(self.entries.len() - 1)
    }

    pub fn push_queried(&mut self, score: f64, label: Label) -> Result<usize> {
        self.push(score, EntryLabel::Queried(label))
    }

    /// Pushes an entry whose oracle label is still outstanding.
    pub fn push_unlabeled(&mut self, score: f64) -> Result<usize> {
        self.push(score, EntryLabel::Unlabeled)
    }

    /// Pushes an entry that was not queried because it fell outside `ci`,
    /// recording the label every surviving threshold agrees on.
    pub fn push_skipped(&mut self, score: f64, ci: &ConfidenceInterval) -> Result<Label> {
        let label = ci.impute(score).ok_or(TrmError::UnlabeledInsideInterval {
            index: self.entries.len(),
            score,
            lower: ci.lower,
            upper: ci.upper,
        })?;
        self.push(score, EntryLabel::Imputed(label))?;
        Ok(label)
    }

    /// Resolves a previously unlabeled entry with its oracle label.
    pub fn set_label(&mut self, index: usize, label: Label) {
        self.entries[index].label = EntryLabel::Queried(label);
    }

    /// Marks an entry whose oracle call failed.
    pub fn mark_failed(&mut self, index: usize) {
        self.entries[index].label = EntryLabel::Failed;
    }

    /// Number of entries that take part in risk computations.
    pub fn usable_len(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.label != EntryLabel::Failed)
            .count()
    }

    /// Scores paired with resolved labels, imputing `Unlabeled` entries
    /// against `ci`.
    fn resolved(&self, ci: &ConfidenceInterval) -> Result<Vec<(f64, Label)>> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.label != EntryLabel::Failed)
            .map(|(index, e)| match e.label {
                EntryLabel::Queried(l) | EntryLabel::Imputed(l) => Ok((e.score, l)),
                EntryLabel::Failed => unreachable!("failed entries are filtered out"),
                EntryLabel::Unlabeled => ci.impute(e.score).map(|l| (e.score, l)).ok_or(
                    TrmError::UnlabeledInsideInterval {
                        index,
                        score: e.score,
                        lower: ci.lower,
                        upper: ci.upper,
                    },
                ),
            })
            .collect()
    }

    pub fn candidates(&self) -> ThresholdCandidates {
        ThresholdCandidates::from_scores(
            self.entries
                .iter()
                .filter(|e| e.label != EntryLabel::Failed)
                .map(|e| e.score),
        )
    }
}

/// The band `[lower, upper]` of thresholds that survived the last update.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub lower: f64,
    pub upper: f64,
    /// Window counter at the last update; 0 for the initial interval.
    pub last_update_t: u64,
    /// Radius used at the last update; `None` for the initial interval.
    pub beta: Option<f64>,
    /// Empirical risk minimizer found at the last update.
    pub estimate: Option<f64>,
}

impl ConfidenceInterval {
    /// The round-start interval `[0, 1]`.
    pub fn full() -> Self {
        ConfidenceInterval {
            lower: 0.0,
            upper: 1.0,
            last_update_t: 0,
            beta: None,
            estimate: None,
        }
    }

    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lower) || !(0.0..=1.0).contains(&upper) || lower > upper {
            return Err(TrmError::InvalidInterval { lower, upper });
        }
        Ok(ConfidenceInterval {
            lower,
            upper,
            ..ConfidenceInterval::full()
        })
    }

    /// Closed-interval membership.
    pub fn contains(&self, score: f64) -> bool {
        self.lower <= score && score <= self.upper
    }

    /// Label implied for a score outside the interval: every surviving
    /// threshold puts a score below `lower` in class 0 and one above `upper`
    /// in class 1. `None` inside the interval.
    pub fn impute(&self, score: f64) -> Option<Label> {
        if score < self.lower {
            Some(Label::Zero)
        } else if score > self.upper {
            Some(Label::One)
        } else {
            None
        }
    }

    /// Intersection with `other`, or `None` when disjoint.
    pub fn intersect(&self, other: &ConfidenceInterval) -> Option<ConfidenceInterval> {
        let lower = self.lower.max(other.lower);
        let upper = self.upper.min(other.upper);
        (lower <= upper).then_some(ConfidenceInterval {
            lower,
            upper,
            ..*other
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskKind {
    TrueRisk,
    EmpiricalRisk,
}

/// Risk of every candidate threshold, in ascending threshold order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskTable {
    pub kind: RiskKind,
    pub entries: Vec<(f64, f64)>,
}

impl RiskTable {
    /// Minimizing entry; the smallest threshold wins ties.
    pub fn argmin(&self) -> Option<(f64, f64)> {
        self.entries.iter().copied().fold(None, |best, (s, r)| match best {
            Some((_, br)) if br <= r => best,
            _ => Some((s, r)),
        })
    }

    pub fn risk_at(&self, s: f64) -> Option<f64> {
        self.entries
            .binary_search_by(|(c, _)| c.total_cmp(&s))
            .ok()
            .map(|i| self.entries[i].1)
    }
}

/// `R(s)`: expected fraction of mistakes of the threshold classifier at `s`
/// when snippet `i` is class 0 with probability `eta[i]`.
pub fn true_risk(scores: &[f64], eta: &[f64], s: f64) -> Result<f64> {
    check_instance(scores, eta)?;
    if !(0.0..=1.0).contains(&s) {
        return Err(TrmError::ThresholdOutOfRange(s));
    }
    Ok(direct_risk(scores, eta, s))
}

fn direct_risk(scores: &[f64], eta: &[f64], s: f64) -> f64 {
    let mut acc = 0.0;
    for (&score, &e) in scores.iter().zip(eta) {
        acc += if score <= s { 1.0 - e } else { e };
    }
    acc / scores.len() as f64
}

/// True risk of every candidate in `{0} ∪ scores`, via one sort and a
/// running sum.
pub fn true_risk_table(scores: &[f64], eta: &[f64]) -> Result<RiskTable> {
    check_instance(scores, eta)?;
    let n = scores.len() as f64;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Unnormalized risk at a threshold below every score: all class 1.
    let mut risk: f64 = eta.iter().sum();
    let mut entries = Vec::with_capacity(scores.len() + 1);
    let mut k = 0;
    if scores[order[0]] > 0.0 {
        entries.push((0.0, risk / n));
    }
    while k < order.len() {
        let s = scores[order[k]];
        while k < order.len() && scores[order[k]] == s {
            risk += 1.0 - 2.0 * eta[order[k]];
            k += 1;
        }
        entries.push((s, (risk / n).clamp(0.0, 1.0)));
    }
    Ok(RiskTable {
        kind: RiskKind::TrueRisk,
        entries,
    })
}

/// The true risk minimizer `s*` and its risk.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrmThreshold {
    pub threshold: f64,
    pub risk: f64,
}

/// Exhaustive true risk minimizer over `{0} ∪ scores`.
///
/// The running-sum table locates the minimum; candidates within rounding
/// distance of it are re-evaluated directly so the reported threshold and
/// risk are those of the direct sum, smallest threshold first on ties.
pub fn compute_trm_exact(scores: &[f64], eta: &[f64]) -> Result<TrmThreshold> {
    let table = true_risk_table(scores, eta)?;
    let min = table
        .entries
        .iter()
        .map(|&(_, r)| r)
        .fold(f64::INFINITY, f64::min);
    let tol = 1e-9;
    let mut best: Option<TrmThreshold> = None;
    for &(s, r) in &table.entries {
        if r > min + tol {
            continue;
        }
        let exact = direct_risk(scores, eta, s);
        if best.is_none_or(|b| exact < b.risk) {
            best = Some(TrmThreshold {
                threshold: s,
                risk: exact,
            });
        }
    }
    best.ok_or(TrmError::Empty)
}

/// Per-candidate mistake counts of the window (numerators of the empirical
/// risk), exact in integer arithmetic.
struct MistakeCounts {
    candidates: Vec<f64>,
    mistakes: Vec<u64>,
    n: u64,
}

fn mistake_counts(window: &ScoredWindow, ci: &ConfidenceInterval) -> Result<MistakeCounts> {
    let mut points = window.resolved(ci)?;
    if points.is_empty() {
        return Err(TrmError::Empty);
    }
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    let zeros_total = points.iter().filter(|p| p.1 == Label::Zero).count() as u64;

    let mut candidates = Vec::with_capacity(points.len() + 1);
    let mut mistakes = Vec::with_capacity(points.len() + 1);
    // Threshold 0 below every positive score: mistakes are all label-0 points
    // above it, i.e. every zero (points at exactly 0 are handled below).
    let (mut ones_le, mut zeros_le) = (0u64, 0u64);
    let mut k = 0;
    if points[0].0 > 0.0 {
        candidates.push(0.0);
        mistakes.push(zeros_total);
    }
    while k < points.len() {
        let s = points[k].0;
        while k < points.len() && points[k].0 == s {
            match points[k].1 {
                Label::One => ones_le += 1,
                Label::Zero => zeros_le += 1,
            }
            k += 1;
        }
        candidates.push(s);
        mistakes.push(ones_le + (zeros_total - zeros_le));
    }
    Ok(MistakeCounts {
        candidates,
        mistakes,
        n: points.len() as u64,
    })
}

/// `L̂_t(s)`: empirical risk of the threshold at `s` over the window, with
/// unlabeled entries imputed from their side of `ci_at_query_time`.
pub fn empirical_risk(window: &ScoredWindow, ci_at_query_time: &ConfidenceInterval, s: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&s) {
        return Err(TrmError::ThresholdOutOfRange(s));
    }
    let points = window.resolved(ci_at_query_time)?;
    if points.is_empty() {
        return Err(TrmError::Empty);
    }
    let mistakes = points
        .iter()
        .filter(|&&(score, label)| (score <= s) == (label == Label::One))
        .count();
    Ok(mistakes as f64 / points.len() as f64)
}

/// Empirical risk minimizer `ŝ_t` over the window's candidates together
/// with the full risk table. O(t log t).
pub fn empirical_trm(window: &ScoredWindow, ci: &ConfidenceInterval) -> Result<(f64, RiskTable)> {
    let counts = mistake_counts(window, ci)?;
    let k = argmin_index(&counts.mistakes);
    let n = counts.n as f64;
    let entries = counts
        .candidates
        .iter()
        .zip(&counts.mistakes)
        .map(|(&s, &m)| (s, m as f64 / n))
        .collect();
    Ok((
        counts.candidates[k],
        RiskTable {
            kind: RiskKind::EmpiricalRisk,
            entries,
        },
    ))
}

fn argmin_index(values: &[u64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = i;
        }
    }
    best
}

/// `β_{t+1} = sqrt(2 ln(2 log2(t+1)^2 N^2 / δ) / (t+1))` for any sample
/// count `t + 1 >= 2`.
pub fn confidence_radius(t_plus_1: u64, n_stream: u64, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(TrmError::InvalidDelta(delta));
    }
    if t_plus_1 < 2 {
        return Err(TrmError::TooFewSamples(t_plus_1));
    }
    if n_stream == 0 {
        return Err(TrmError::EmptyStream);
    }
    let samples = t_plus_1 as f64;
    let n = n_stream as f64;
    let log2 = samples.log2();
    let inner = 2.0 * log2 * log2 * n * n / delta;
    Ok((2.0 * inner.ln() / samples).sqrt())
}

/// The radius schedule evaluated only at power-of-two sample counts.
pub fn beta(t_plus_1: u64, n_stream: u64, delta: f64) -> Result<f64> {
    if t_plus_1 < 2 || !t_plus_1.is_power_of_two() {
        return Err(TrmError::NotPowerOfTwo(t_plus_1));
    }
    confidence_radius(t_plus_1, n_stream, delta)
}

/// Recomputes the interval from the window: a candidate `s` survives iff
///
/// `L̂(s) - L̂(ŝ) <= β²/2 + β sqrt((#{candidates between s and ŝ} - 1) / t)`
///
/// and the new interval spans the smallest and largest survivors. The rule
/// is evaluated from scratch; no intersection with `old_ci` is taken.
/// `old_ci` only serves to impute entries still marked unlabeled.
pub fn update_confidence_interval(
    window: &ScoredWindow,
    old_ci: &ConfidenceInterval,
    beta: f64,
) -> Result<ConfidenceInterval> {
    if !beta.is_finite() || beta < 0.0 {
        return Err(TrmError::InvalidRadius(beta));
    }
    let t = match window.t() {
        Some(t) if t >= 1 => t,
        _ => return Err(TrmError::WindowTooShort(window.len())),
    };
    let counts = mistake_counts(window, old_ci)?;
    let k_hat = argmin_index(&counts.mistakes);
    let n = counts.n as f64;
    let base = beta * beta / 2.0;
    let survives = |k: usize| {
        let gap = (counts.mistakes[k] - counts.mistakes[k_hat]) as f64 / n;
        let between = k.abs_diff(k_hat) as f64;
        gap <= base + beta * (between / t as f64).sqrt()
    };
    let len = counts.candidates.len();
    let lo = (0..len).find(|&k| survives(k)).unwrap_or(k_hat);
    let hi = (0..len).rev().find(|&k| survives(k)).unwrap_or(k_hat);
    Ok(ConfidenceInterval {
        lower: counts.candidates[lo],
        upper: counts.candidates[hi],
        last_update_t: t,
        beta: Some(beta),
        estimate: Some(counts.candidates[k_hat]),
    })
}
