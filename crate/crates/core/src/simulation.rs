//! Synthetic worlds with known `η`, brute-force reference quantities, and
//! the experiment runners built on them.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distiller::{
    run_distillation, DistillConfig, DistillError, DistillObserver, NoopObserver, RunControl,
    Strategy,
};
use crate::label::{imbalance_ratio, Label};
use crate::oracle::{Oracle, OracleError, SimulatedOracle};
use crate::scorer::{
    FeatureSpace, FeatureVector, LinearScorerFactory, PassthroughScorer, Scorer, ScorerParams,
    TrainConfig,
};
use crate::snippet::{Snippet, StreamItem};
use crate::trm::{
    compute_trm_exact, confidence_radius, true_risk_table, update_confidence_interval,
    ConfidenceInterval, RiskTable, ScoredWindow, TrmError,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("infeasible instance: {0}")]
    Infeasible(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("interval [{lower}, {upper}] contains no scores")]
    EmptyInterval { lower: f64, upper: f64 },
    #[error("interval [{lower}, {upper}] has zero class-1 mass")]
    ZeroDenominator { lower: f64, upper: f64 },
    #[error(transparent)]
    Trm(#[from] TrmError),
    #[error(transparent)]
    Distill(#[from] DistillError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;

/// A fixed scorer's view of a stream: scores and `η_j = P(class 0 | x_j)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticInstance {
    pub scores: Vec<f64>,
    pub eta: Vec<f64>,
    pub seed: u64,
}

impl SyntheticInstance {
    pub fn new(scores: Vec<f64>, eta: Vec<f64>, seed: u64) -> Result<Self> {
        if scores.len() != eta.len() {
            return Err(SimError::InvalidArgument(format!(
                "{} scores but {} eta values",
                scores.len(),
                eta.len()
            )));
        }
        // Reuse the range checks of the risk code.
        crate::trm::true_risk(&scores, &eta, 0.0)?;
        Ok(SyntheticInstance { scores, eta, seed })
    }

    pub fn n(&self) -> usize {
        self.scores.len()
    }

    /// Mean `η`: the expected class-0 fraction of the stream.
    pub fn prior(&self) -> f64 {
        self.eta.iter().sum::<f64>() / self.n() as f64
    }

    /// Expected stream imbalance `Ση / Σ(1-η)`.
    pub fn expected_lambda(&self) -> f64 {
        let a: f64 = self.eta.iter().sum();
        a / (self.n() as f64 - a)
    }

    pub fn trm(&self) -> Result<crate::trm::TrmThreshold> {
        Ok(compute_trm_exact(&self.scores, &self.eta)?)
    }

    pub fn risk_table(&self) -> Result<RiskTable> {
        Ok(true_risk_table(&self.scores, &self.eta)?)
    }

    /// The instance in a seeded random order; snippet ids index `eta`.
    pub fn stream(&self, shuffle_seed: u64) -> Vec<StreamItem> {
        let mut order: Vec<usize> = (0..self.n()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
        order
            .into_iter()
            .map(|i| StreamItem {
                snippet: Snippet::synthetic(i as u64),
                features: PassthroughScorer::features(self.scores[i]),
            })
            .collect()
    }

    pub fn oracle(&self, seed: u64) -> Result<SimulatedOracle> {
        Ok(SimulatedOracle::new(self.eta.clone(), seed)?)
    }

    /// Indices sorted by score (ties by index).
    pub fn rank_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.n()).collect();
        order.sort_by(|&a, &b| self.scores[a].total_cmp(&self.scores[b]).then(a.cmp(&b)));
        order
    }
}

/// Builds an instance whose `η`, read in score order, is a monotone
/// non-increasing piecewise-linear curve with per-rank slope at most
/// `target_smoothness`, crossing 0.5 at an interior rank, with mean
/// `target_prior` (class 0 is the minority).
///
/// Sixteen equal-length pieces get slopes drawn from
/// `[smoothness / 4, smoothness]`; the curve's offset is found by bisection
/// so the mean matches the prior.
pub fn generate_instance(
    n: usize,
    target_prior: f64,
    target_smoothness: f64,
    seed: u64,
) -> Result<SyntheticInstance> {
    if n < 8 {
        return Err(SimError::InvalidArgument(format!("n = {n} < 8")));
    }
    if !(target_prior > 0.0 && target_prior < 0.5) {
        return Err(SimError::InvalidArgument(format!(
            "prior {target_prior} must lie in (0, 0.5) for class 0 to be the minority"
        )));
    }
    if !(target_smoothness > 0.0 && target_smoothness <= 1.0) {
        return Err(SimError::InvalidArgument(format!(
            "smoothness {target_smoothness} must lie in (0, 1]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scores: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    scores.sort_by(f64::total_cmp);

    const PIECES: usize = 16;
    let piece_len = n.div_ceil(PIECES);
    let slopes: Vec<f64> = (0..PIECES)
        .map(|_| target_smoothness * rng.random_range(0.25..=1.0))
        .collect();
    // drop[i] = cumulative decrease from rank 0 to rank i
    let mut drops = vec![0.0; n];
    for i in 1..n {
        drops[i] = drops[i - 1] + slopes[(i - 1) / piece_len];
    }
    let curve = |c: f64| -> Vec<f64> { drops.iter().map(|d| (c - d).clamp(0.0, 1.0)).collect() };
    let mean = |eta: &[f64]| eta.iter().sum::<f64>() / n as f64;

    // Crossing 0.5 strictly inside needs η_0 > 0.5 and η_{n-1} < 0.5.
    let c_lo = 0.5 + 1e-9;
    let c_hi = 0.5 + drops[n - 1] - 1e-9;
    if c_hi <= c_lo {
        return Err(SimError::Infeasible(format!(
            "smoothness {target_smoothness} is too small for η to fall through 0.5 within {n} ranks"
        )));
    }
    let (m_lo, m_hi) = (mean(&curve(c_lo)), mean(&curve(c_hi)));
    if target_prior < m_lo {
        return Err(SimError::Infeasible(format!(
            "prior {target_prior} is below the smallest reachable mean {m_lo:.4} at smoothness {target_smoothness}"
        )));
    }
    if target_prior > m_hi {
        return Err(SimError::Infeasible(format!(
            "prior {target_prior} is above the largest reachable mean {m_hi:.4} at smoothness {target_smoothness}"
        )));
    }
    let (mut lo, mut hi) = (c_lo, c_hi);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean(&curve(mid)) < target_prior {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let eta = curve(0.5 * (lo + hi));

    // Present the points in a seeded random order rather than sorted.
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let inst = SyntheticInstance {
        scores: order.iter().map(|&i| scores[i]).collect(),
        eta: order.iter().map(|&i| eta[i]).collect(),
        seed,
    };
    if inst.trm()?.threshold == 0.0 {
        return Err(SimError::Infeasible("generated instance has s* = 0".into()));
    }
    Ok(inst)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessReport {
    pub l_value: f64,
    /// Score ranks `(j, j + 1)` attaining the maximum.
    pub argmax_pair: (usize, usize),
}

/// Maximum adjacent `|Δη|` after sorting by score.
pub fn measure_smoothness(instance: &SyntheticInstance) -> SmoothnessReport {
    let order = instance.rank_order();
    let mut best = SmoothnessReport {
        l_value: 0.0,
        argmax_pair: (0, 0),
    };
    for j in 1..order.len() {
        let d = (instance.eta[order[j]] - instance.eta[order[j - 1]]).abs();
        if j == 1 || d > best.l_value {
            best = SmoothnessReport {
                l_value: d,
                argmax_pair: (j - 1, j),
            };
        }
    }
    best
}

/// Lower bound on the interval imbalance ratio:
/// `1 - min((Nγ̄ + LN) / (1.5 - 2L), √L (Nγ̄ + LN + 1) / ((1 - L) √(Nγ̲)))`.
/// Values at or below zero are vacuous.
pub fn theorem2_bound(n: usize, l: f64, gamma_lo: f64, gamma_hi: f64) -> Result<f64> {
    if !(l > 0.0 && l < 1.0) {
        return Err(SimError::InvalidArgument(format!("smoothness {l} must lie in (0, 1)")));
    }
    if !(gamma_lo > 0.0 && gamma_hi > 0.0) {
        return Err(SimError::InvalidArgument("risk gaps must be positive".into()));
    }
    if gamma_lo > gamma_hi {
        return Err(SimError::InvalidArgument(format!(
            "gamma_lo {gamma_lo} exceeds gamma_hi {gamma_hi}"
        )));
    }
    let n = n as f64;
    let top = n * gamma_hi + l * n;
    let term1 = top / (1.5 - 2.0 * l);
    let term2 = l.sqrt() * (top + 1.0) / ((1.0 - l) * (n * gamma_lo).sqrt());
    Ok(1.0 - term1.min(term2))
}

/// `λ(μ̲, μ̄) = Σ η_j / Σ (1 - η_j)` over scores in the closed interval.
pub fn exact_interval_lambda(instance: &SyntheticInstance, mu_lo: f64, mu_hi: f64) -> Result<f64> {
    let (mut a, mut b, mut count) = (0.0, 0.0, 0usize);
    for (s, e) in instance.scores.iter().zip(&instance.eta) {
        if mu_lo <= *s && *s <= mu_hi {
            a += e;
            b += 1.0 - e;
            count += 1;
        }
    }
    if count == 0 {
        return Err(SimError::EmptyInterval {
            lower: mu_lo,
            upper: mu_hi,
        });
    }
    if b <= 0.0 {
        return Err(SimError::ZeroDenominator {
            lower: mu_lo,
            upper: mu_hi,
        });
    }
    Ok(a / b)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Assumptions {
    pub class0_minority: bool,
    pub s_star_nonzero: bool,
    pub s_star_inside: bool,
    pub smoothness_in_range: bool,
    pub gaps_positive: bool,
    pub gaps_below_one: bool,
}

impl Assumptions {
    pub fn all(&self) -> bool {
        self.class0_minority
            && self.s_star_nonzero
            && self.s_star_inside
            && self.smoothness_in_range
            && self.gaps_positive
            && self.gaps_below_one
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalancednessCertificate {
    pub interval: (f64, f64),
    pub s_star: f64,
    pub gamma_lo: f64,
    pub gamma_hi: f64,
    pub smoothness: f64,
    pub lambda_exact: f64,
    /// `None` when the bound is undefined because assumptions fail.
    pub bound_value: Option<f64>,
    pub assumptions: Assumptions,
}

impl BalancednessCertificate {
    /// The bound holds, or does not apply.
    pub fn holds(&self) -> bool {
        match (self.assumptions.all(), self.bound_value) {
            (true, Some(b)) => self.lambda_exact >= b,
            _ => true,
        }
    }

    pub fn vacuous(&self) -> bool {
        self.bound_value.is_none_or(|b| b <= 0.0)
    }
}

/// Evaluates both sides of the balancedness bound for one interval.
pub fn certify(
    instance: &SyntheticInstance,
    table: &RiskTable,
    smoothness: f64,
    mu_lo: f64,
    mu_hi: f64,
) -> Result<BalancednessCertificate> {
    let (s_star, r_star) = table
        .argmin()
        .ok_or_else(|| SimError::InvalidArgument("empty risk table".into()))?;
    let risk = |s: f64| {
        table
            .risk_at(s)
            .ok_or_else(|| SimError::InvalidArgument(format!("{s} is not a candidate threshold")))
    };
    let gamma0 = risk(mu_lo)? - r_star;
    let gamma1 = risk(mu_hi)? - r_star;
    let (gamma_lo, gamma_hi) = (gamma0.min(gamma1), gamma0.max(gamma1));
    let a: f64 = instance.eta.iter().sum();
    let assumptions = Assumptions {
        class0_minority: a < instance.n() as f64 - a,
        s_star_nonzero: s_star != 0.0,
        s_star_inside: mu_lo <= s_star && s_star <= mu_hi,
        smoothness_in_range: smoothness > 0.0 && smoothness < 1.0,
        gaps_positive: gamma0 > 0.0 && gamma1 > 0.0,
        gaps_below_one: gamma_hi < 1.0,
    };
    let bound_value = if assumptions.all() {
        Some(theorem2_bound(instance.n(), smoothness, gamma_lo, gamma_hi)?)
    } else {
        None
    };
    Ok(BalancednessCertificate {
        interval: (mu_lo, mu_hi),
        s_star,
        gamma_lo,
        gamma_hi,
        smoothness,
        lambda_exact: exact_interval_lambda(instance, mu_lo, mu_hi)?,
        bound_value,
        assumptions,
    })
}

/// Settings shared by the fixed-score experiments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageConfig {
    pub delta: f64,
    pub runs: usize,
    pub budget: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Smallest window counter at which intervals update; `u64::MAX` pins
    /// every interval at `[0, 1]`.
    pub first_update_t: u64,
}

impl CoverageConfig {
    pub fn new(delta: f64, runs: usize, budget: usize, batch_size: usize, seed: u64) -> Self {
        CoverageConfig {
            delta,
            runs,
            budget,
            batch_size,
            seed,
            first_update_t: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub runs: usize,
    pub covered: usize,
    pub coverage: f64,
    pub updates: usize,
    /// Mean width of the final interval of each round.
    pub mean_final_width: f64,
}

fn run_seeds<T: Send>(seeds: &[u64], f: impl Fn(u64) -> Result<T> + Sync) -> Result<Vec<T>> {
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(seeds.len().max(1));
    let chunk = seeds.len().div_ceil(workers.max(1)).max(1);
    let f = &f;
    let results: Vec<Result<Vec<T>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(|&s| f(s)).collect::<Result<Vec<T>>>()))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("experiment worker panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(seeds.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

fn derive_seed(base: u64, run: u64, salt: u64) -> u64 {
    let mut z = base ^ run.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ salt.rotate_left(17);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Fraction of seeded sieve runs in which the instance's TRM threshold lies
/// inside every recomputed interval of every round.
pub fn coverage_experiment(instance: &SyntheticInstance, config: &CoverageConfig) -> Result<CoverageReport> {
    if config.runs == 0 {
        return Err(SimError::InvalidArgument("runs must be >= 1".into()));
    }
    let s_star = instance.trm()?.threshold;
    let seeds: Vec<u64> = (0..config.runs as u64).collect();
    let per_run = run_seeds(&seeds, |run| {
        let mut dc = DistillConfig::new(config.batch_size, config.budget, instance.n() as u64);
        dc.delta = config.delta;
        dc.parallelism = 1;
        dc.first_update_t = config.first_update_t;
        let oracle = instance.oracle(derive_seed(config.seed, run, 1))?;
        let out = run_distillation(
            &dc,
            instance.stream(derive_seed(config.seed, run, 2)),
            &oracle,
            &PassthroughScorer,
            RunControl::default(),
            &mut NoopObserver,
        )?;
        let covered = out.ci_updates.iter().all(|u| u.ci.contains(s_star));
        let mut finals = Vec::new();
        for (i, u) in out.ci_updates.iter().enumerate() {
            let last_of_round = out.ci_updates.get(i + 1).is_none_or(|n| n.round != u.round);
            if last_of_round {
                finals.push(u.ci.upper - u.ci.lower);
            }
        }
        Ok((covered, out.ci_updates.len(), finals))
    })?;
    let covered = per_run.iter().filter(|r| r.0).count();
    let widths: Vec<f64> = per_run.iter().flat_map(|r| r.2.iter().copied()).collect();
    Ok(CoverageReport {
        runs: config.runs,
        covered,
        coverage: covered as f64 / config.runs as f64,
        updates: per_run.iter().map(|r| r.1).sum(),
        mean_final_width: if widths.is_empty() {
            1.0
        } else {
            widths.iter().sum::<f64>() / widths.len() as f64
        },
    })
}

/// One round of interval refinement over a shuffled instance with no label
/// budget: every arrival inside the live interval is labeled, others are
/// imputed, and the interval is recomputed at each power-of-two `t >= 2`.
/// Returns `(t, max(R(μ̲) - R(s*), R(μ̄) - R(s*)))` at each requested
/// checkpoint (which must be powers of two).
pub fn shrinkage_trace(
    instance: &SyntheticInstance,
    delta: f64,
    seed: u64,
    checkpoints: &[u64],
) -> Result<Vec<(u64, f64)>> {
    if let Some(c) = checkpoints.iter().find(|c| **c < 2 || !c.is_power_of_two()) {
        return Err(SimError::InvalidArgument(format!("checkpoint {c} is not a power of two >= 2")));
    }
    let table = instance.risk_table()?;
    let (_, r_star) = table.argmin().expect("non-empty instance");
    let oracle = instance.oracle(derive_seed(seed, 0, 3))?;
    let stream = instance.stream(derive_seed(seed, 0, 4));
    let last = checkpoints.iter().copied().max().unwrap_or(0);
    let mut window = ScoredWindow::new(0);
    let mut ci = ConfidenceInterval::full();
    let mut out = Vec::new();
    for item in stream {
        let score = instance.scores[item.snippet.id as usize];
        if ci.contains(score) {
            let label = oracle.label(&item.snippet)?.label;
            window.push_queried(score, label)?;
        } else {
            window.push_skipped(score, &ci)?;
        }
        let t = window.t().expect("non-empty");
        if t >= 2 && t.is_power_of_two() {
            let beta = confidence_radius(t + 1, instance.n() as u64, delta)?;
            ci = update_confidence_interval(&window, &ci, beta)?;
            if checkpoints.contains(&t) {
                let gap = |s: f64| table.risk_at(s).map(|r| r - r_star);
                let g = gap(ci.lower)
                    .zip(gap(ci.upper))
                    .map(|(a, b)| a.max(b))
                    .ok_or_else(|| SimError::InvalidArgument("endpoint not a candidate".into()))?;
                out.push((t, g));
            }
            if t >= last {
                break;
            }
        }
    }
    if out.len() != checkpoints.len() {
        return Err(SimError::InvalidArgument(format!(
            "instance of size {} cannot reach t = {last}",
            instance.n()
        )));
    }
    Ok(out)
}

/// Balanced accuracy: mean of per-class recalls (classes absent from the
/// truth are ignored).
pub fn balanced_accuracy(predicted: &[Label], truth: &[Label]) -> f64 {
    let mut hit = [0usize; 2];
    let mut total = [0usize; 2];
    for (p, t) in predicted.iter().zip(truth) {
        let k = t.as_u8() as usize;
        total[k] += 1;
        if p == t {
            hit[k] += 1;
        }
    }
    let recalls: Vec<f64> = (0..2)
        .filter(|&k| total[k] > 0)
        .map(|k| hit[k] as f64 / total[k] as f64)
        .collect();
    if recalls.is_empty() {
        return 0.0;
    }
    recalls.iter().sum::<f64>() / recalls.len() as f64
}

/// Two-class task with 2-D Gaussian features: class 0 (the minority) is
/// centred at `-m·(1,1)/√2`, class 1 at `+m·(1,1)/√2`, unit covariance,
/// `m = separation / 2`. The oracle answers the generating class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianTask {
    pub stream_length: usize,
    pub minority_prior: f64,
    pub separation: f64,
    pub eval_size: usize,
    pub seed: u64,
    pub train: TrainConfig,
    /// Scores above this are predicted class 1 at evaluation time.
    pub decision_threshold: f64,
}

impl GaussianTask {
    /// Separation 3 puts the best balanced accuracy of a linear rule at
    /// `Φ(1.5) ≈ 0.933`, so a 90% target is reachable but not free.
    pub fn reference(seed: u64) -> Self {
        GaussianTask {
            stream_length: 50_000,
            minority_prior: 0.05,
            separation: 3.0,
            eval_size: 2_000,
            seed,
            train: TrainConfig {
                seed,
                ..TrainConfig::default()
            },
            decision_threshold: 0.5,
        }
    }

    fn sample(&self, n: usize, seed: u64) -> Vec<(FeatureVector, Label)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let m = self.separation / 2.0 / std::f64::consts::SQRT_2;
        (0..n)
            .map(|_| {
                let label = if rng.random::<f64>() < self.minority_prior {
                    Label::Zero
                } else {
                    Label::One
                };
                let sign = if label == Label::Zero { -1.0 } else { 1.0 };
                let x = sign * m + normal.sample(&mut rng);
                let y = sign * m + normal.sample(&mut rng);
                (FeatureVector::dense(&[x, y]), label)
            })
            .collect()
    }

    /// Stream items (ids are indices) and the matching oracle.
    pub fn stream(&self) -> Result<(Vec<StreamItem>, SimulatedOracle)> {
        let data = self.sample(self.stream_length, derive_seed(self.seed, 0, 5));
        let eta: Vec<f64> = data
            .iter()
            .map(|(_, l)| if *l == Label::Zero { 1.0 } else { 0.0 })
            .collect();
        let items = data
            .into_iter()
            .enumerate()
            .map(|(i, (features, _))| StreamItem {
                snippet: Snippet::synthetic(i as u64),
                features,
            })
            .collect();
        Ok((items, SimulatedOracle::new(eta, derive_seed(self.seed, 0, 6))?))
    }

    /// Held-out evaluation points labeled by the generating class.
    pub fn eval_set(&self) -> Vec<(FeatureVector, Label)> {
        self.sample(self.eval_size, derive_seed(self.seed, 0, 7))
    }

    pub fn factory(&self) -> LinearScorerFactory {
        LinearScorerFactory {
            space: FeatureSpace::Dense { dim: 2 },
            config: self.train.clone(),
        }
    }

    pub fn evaluate(&self, model: &ScorerParams, eval: &[(FeatureVector, Label)]) -> f64 {
        let predicted: Vec<Label> = eval
            .iter()
            .map(|(x, _)| {
                let s = model.score(x).unwrap_or(0.0);
                Label::from_bool(s > self.decision_threshold)
            })
            .collect();
        let truth: Vec<Label> = eval.iter().map(|(_, l)| *l).collect();
        balanced_accuracy(&predicted, &truth)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub strategy: String,
    pub budget: usize,
    pub seed: u64,
    pub queries: usize,
    pub bal_acc: f64,
    pub queried_lambda: f64,
    pub minority_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    pub strategy: String,
    pub budget: usize,
    pub runs: usize,
    pub mean_bal_acc: f64,
    pub stderr_bal_acc: f64,
    pub mean_queried_lambda: f64,
    pub stderr_queried_lambda: f64,
    pub mean_minority_fraction: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CurveSet {
    pub points: Vec<CurvePoint>,
}

fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

impl CurveSet {
    pub fn summary(&self) -> Vec<CurveSummary> {
        let mut keys: Vec<(String, usize)> = self
            .points
            .iter()
            .map(|p| (p.strategy.clone(), p.budget))
            .collect();
        keys.sort();
        keys.dedup();
        keys.into_iter()
            .map(|(strategy, budget)| {
                let pts: Vec<&CurvePoint> = self
                    .points
                    .iter()
                    .filter(|p| p.strategy == strategy && p.budget == budget)
                    .collect();
                let acc: Vec<f64> = pts.iter().map(|p| p.bal_acc).collect();
                let lam: Vec<f64> = pts.iter().map(|p| p.queried_lambda).collect();
                let frac: Vec<f64> = pts.iter().map(|p| p.minority_fraction).collect();
                let (mean_bal_acc, stderr_bal_acc) = mean_stderr(&acc);
                let (mean_queried_lambda, stderr_queried_lambda) = mean_stderr(&lam);
                CurveSummary {
                    strategy,
                    budget,
                    runs: pts.len(),
                    mean_bal_acc,
                    stderr_bal_acc,
                    mean_queried_lambda,
                    stderr_queried_lambda,
                    mean_minority_fraction: mean_stderr(&frac).0,
                }
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for p in &self.points {
            w.serialize(p)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for s in self.summary() {
            w.serialize(s)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Smallest budget whose mean balanced accuracy reaches `target`.
    pub fn budget_to_reach(&self, strategy: &str, target: f64) -> Option<usize> {
        self.summary()
            .into_iter()
            .filter(|s| s.strategy == strategy && s.mean_bal_acc >= target)
            .map(|s| s.budget)
            .min()
    }
}

struct CurveObserver<'a> {
    task: &'a GaussianTask,
    eval: &'a [(FeatureVector, Label)],
    grid: &'a [usize],
    /// (labeled count, balanced accuracy) at grid budgets.
    points: Vec<(usize, f64)>,
}

impl DistillObserver<ScorerParams> for CurveObserver<'_> {
    fn on_fit(&mut self, _round: u32, labeled: usize, model: &ScorerParams) {
        if self.grid.contains(&labeled) {
            self.points.push((labeled, self.task.evaluate(model, self.eval)));
        }
    }
}

/// Accuracy and balancedness versus queries for each strategy and seed on
/// the Gaussian task. One run per (strategy, seed) at the largest budget
/// yields every smaller grid point, since a run's first `kB` labels and
/// fits are exactly those of a run with budget `kB`.
pub fn run_comparison(
    task: &GaussianTask,
    strategies: &[Strategy],
    budget_grid: &[usize],
    seeds: &[u64],
    batch_size: usize,
) -> Result<CurveSet> {
    let max_budget = *budget_grid
        .iter()
        .max()
        .ok_or_else(|| SimError::InvalidArgument("empty budget grid".into()))?;
    if let Some(b) = budget_grid.iter().find(|b| **b == 0 || **b % batch_size != 0) {
        return Err(SimError::InvalidArgument(format!(
            "budget {b} is not a positive multiple of batch size {batch_size}"
        )));
    }
    let jobs: Vec<u64> = (0..(strategies.len() * seeds.len()) as u64).collect();
    let per_job = run_seeds(&jobs, |job| {
        let strategy = strategies[job as usize / seeds.len()];
        let seed = seeds[job as usize % seeds.len()];
        let task = GaussianTask {
            seed,
            train: TrainConfig {
                seed,
                ..task.train.clone()
            },
            ..task.clone()
        };
        let (stream, oracle) = task.stream()?;
        let eval = task.eval_set();
        let mut config = DistillConfig::new(batch_size, max_budget, task.stream_length as u64);
        config.strategy = strategy;
        config.parallelism = 1;
        let mut obs = CurveObserver {
            task: &task,
            eval: &eval,
            grid: budget_grid,
            points: Vec::new(),
        };
        let out = run_distillation(
            &config,
            stream,
            &oracle,
            &task.factory(),
            RunControl::default(),
            &mut obs,
        )?;
        let records = out.labeled.records();
        let points: Vec<CurvePoint> = obs
            .points
            .into_iter()
            .map(|(queries, bal_acc)| {
                let labels: Vec<Label> = records[..queries].iter().map(|r| r.label).collect();
                let zeros = labels.iter().filter(|l| **l == Label::Zero).count();
                CurvePoint {
                    strategy: strategy.name().to_string(),
                    budget: queries,
                    seed,
                    queries,
                    bal_acc,
                    queried_lambda: imbalance_ratio(&labels).lambda,
                    minority_fraction: zeros as f64 / queries as f64,
                }
            })
            .collect();
        Ok(points)
    })?;
    let mut points: Vec<CurvePoint> = per_job.into_iter().flatten().collect();
    points.sort_by(|a, b| {
        (a.strategy.as_str(), a.budget, a.seed).cmp(&(b.strategy.as_str(), b.budget, b.seed))
    });
    Ok(CurveSet { points })
}

/// Queried-label statistics of one seeded run on a fixed-score instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalanceRun {
    pub strategy: String,
    pub seed: u64,
    pub labeled: usize,
    pub minority_fraction: f64,
    pub queried_lambda: f64,
}

/// Runs each strategy on the same seeded streams of a fixed-score instance
/// and reports the class balance of what was queried.
pub fn balance_comparison(
    instance: &SyntheticInstance,
    strategies: &[Strategy],
    seeds: &[u64],
    budget: usize,
    batch_size: usize,
    delta: f64,
) -> Result<Vec<BalanceRun>> {
    let jobs: Vec<u64> = (0..(strategies.len() * seeds.len()) as u64).collect();
    let mut runs = run_seeds(&jobs, |job| {
        let strategy = strategies[job as usize / seeds.len()];
        let seed = seeds[job as usize % seeds.len()];
        let mut config = DistillConfig::new(batch_size, budget, instance.n() as u64);
        config.strategy = strategy;
        config.delta = delta;
        config.parallelism = 1;
        let oracle = instance.oracle(derive_seed(seed, 0, 1))?;
        let out = run_distillation(
            &config,
            instance.stream(derive_seed(seed, 0, 2)),
            &oracle,
            &PassthroughScorer,
            RunControl::default(),
            &mut NoopObserver,
        )?;
        Ok(BalanceRun {
            strategy: strategy.name().to_string(),
            seed,
            labeled: out.labeled.len(),
            minority_fraction: out.labeled.class_fraction(Label::Zero),
            queried_lambda: out.labeled.imbalance(),
        })
    })?;
    runs.sort_by(|a, b| (a.strategy.as_str(), a.seed).cmp(&(b.strategy.as_str(), b.seed)));
    Ok(runs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_instance_matches_targets() {
        let inst = generate_instance(10_000, 0.05, 1e-3, 1).unwrap();
        let l = measure_smoothness(&inst).l_value;
        assert!(l <= 1e-3 + 1e-15, "{l}");
        let prior = inst.prior();
        assert!((0.045..=0.055).contains(&prior), "{prior}");
        assert!(inst.trm().unwrap().threshold > 0.0);
    }

    #[test]
    fn monotone_eta_puts_s_star_at_the_crossing() {
        let inst = generate_instance(2_000, 0.1, 2e-3, 7).unwrap();
        let order = inst.rank_order();
        let s_star = inst.trm().unwrap().threshold;
        let cross = order.iter().position(|&i| inst.eta[i] < 0.5).unwrap();
        // η ≥ 0.5 exactly up to the crossing rank, so s* is the last score
        // before it (within one candidate).
        let k = order.iter().position(|&i| inst.scores[i] == s_star).unwrap();
        assert!(k + 1 == cross || k == cross, "k={k} cross={cross}");
    }

    #[test]
    fn instances_are_seeded() {
        let a = generate_instance(500, 0.1, 5e-3, 3).unwrap();
        assert_eq!(a, generate_instance(500, 0.1, 5e-3, 3).unwrap());
        assert_ne!(a, generate_instance(500, 0.1, 5e-3, 4).unwrap());
    }

    #[test]
    fn infeasible_combinations_are_explained() {
        let err = generate_instance(100, 0.05, 1e-4, 1).unwrap_err();
        assert!(matches!(err, SimError::Infeasible(_)), "{err}");
        assert!(generate_instance(100, 0.5, 1e-2, 1).is_err());
        assert!(generate_instance(4, 0.1, 1e-2, 1).is_err());
    }

    #[test]
    fn smoothness_examples() {
        let flat = SyntheticInstance::new(vec![0.1, 0.5, 0.9], vec![0.3; 3], 0).unwrap();
        assert_eq!(measure_smoothness(&flat).l_value, 0.0);
        let pair = SyntheticInstance::new(vec![0.2, 0.8], vec![0.9, 0.1], 0).unwrap();
        let r = measure_smoothness(&pair);
        assert!((r.l_value - 0.8).abs() < 1e-15);
        assert_eq!(r.argmax_pair, (0, 1));
    }

    #[test]
    fn theorem2_examples() {
        let b = theorem2_bound(100, 0.001, 0.001, 0.002).unwrap();
        assert!((b - 0.8699).abs() < 5e-5, "{b}");
        let near = theorem2_bound(100, 1e-9, 1e-9, 1e-9).unwrap();
        assert!(near > 0.999);
        assert!(theorem2_bound(100, 0.5, 0.3, 0.9).unwrap() <= 0.0);
        assert!(theorem2_bound(100, 1.0, 0.1, 0.2).is_err());
        assert!(theorem2_bound(100, 0.0, 0.1, 0.2).is_err());
        assert!(theorem2_bound(100, 0.1, 0.3, 0.2).is_err());
    }

    #[test]
    fn interval_lambda_examples() {
        let inst = SyntheticInstance::new(vec![0.1, 0.4, 0.6, 0.9], vec![0.5, 0.5, 0.5, 0.2], 0).unwrap();
        assert_eq!(exact_interval_lambda(&inst, 0.1, 0.6).unwrap(), 1.0);
        let whole = exact_interval_lambda(&inst, 0.0, 1.0).unwrap();
        assert!((whole - inst.expected_lambda()).abs() < 1e-15);
        assert!(matches!(
            exact_interval_lambda(&inst, 0.45, 0.55),
            Err(SimError::EmptyInterval { .. })
        ));
        let ones = SyntheticInstance::new(vec![0.5], vec![1.0], 0).unwrap();
        assert!(matches!(
            exact_interval_lambda(&ones, 0.0, 1.0),
            Err(SimError::ZeroDenominator { .. })
        ));
    }

    #[test]
    fn balanced_accuracy_examples() {
        use Label::*;
        assert_eq!(balanced_accuracy(&[Zero, One, One, One], &[Zero, One, One, One]), 1.0);
        assert_eq!(balanced_accuracy(&[One, One, One, One], &[Zero, One, One, One]), 0.5);
    }

    #[test]
    fn pinned_interval_covers_trivially() {
        let inst = generate_instance(2_000, 0.05, 5e-3, 5).unwrap();
        let mut cfg = CoverageConfig::new(0.1, 5, 64, 16, 1);
        cfg.first_update_t = u64::MAX;
        let report = coverage_experiment(&inst, &cfg).unwrap();
        assert_eq!(report.coverage, 1.0);
        assert_eq!(report.updates, 0);
    }

    #[test]
    fn curve_summary_statistics() {
        let mk = |seed, acc| CurvePoint {
            strategy: "sieve".into(),
            budget: 32,
            seed,
            queries: 32,
            bal_acc: acc,
            queried_lambda: 0.5,
            minority_fraction: 0.3,
        };
        let set = CurveSet {
            points: vec![mk(1, 0.8), mk(2, 0.9), mk(3, 1.0)],
        };
        let s = &set.summary()[0];
        assert!((s.mean_bal_acc - 0.9).abs() < 1e-12);
        assert!((s.stderr_bal_acc - 0.1 / 3f64.sqrt()).abs() < 1e-12);
        assert_eq!(set.budget_to_reach("sieve", 0.85), Some(32));
        assert_eq!(set.budget_to_reach("random", 0.85), None);
        let mut buf = Vec::new();
        set.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("strategy,budget,seed,queries,bal_acc,queried_lambda,minority_fraction\n"));
    }
}
