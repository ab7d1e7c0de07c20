//! Lightweight scorers mapping a snippet's features to `[0, 1]`.
//!
//! The default scorer is a linear model over hashed word unigrams and
//! bigrams, `sigmoid(w·x + b)`, trained with focal loss from a zero
//! initialization every time it is fit.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::Label;

/// Probabilities are clamped into `[EPS, 1 - EPS]` before taking logs.
pub const PROB_EPS: f64 = 1e-12;

const MODEL_MAGIC: &str = "sieve-linear-model";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum ScorerError {
    #[error("feature index {index} out of range for dimension {dim}")]
    DimensionMismatch { index: u32, dim: usize },
    #[error("feature dimension must be a power of two >= 2, got {0}")]
    InvalidDimension(usize),
    #[error("cannot fit on an empty example list")]
    NoExamples,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("model file: {0}")]
    ModelFormat(String),
    #[error("feature space mismatch: model uses {model}, caller uses {caller}")]
    SpaceMismatch { model: String, caller: String },
}

pub type Result<T> = std::result::Result<T, ScorerError>;

/// Sparse feature vector; indices strictly increasing.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn dense(values: &[f64]) -> Self {
        FeatureVector {
            indices: (0..values.len() as u32).collect(),
            values: values.to_vec(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// How raw items are turned into features, recorded in the model file so
/// that filtering uses the same featurizer as training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureSpace {
    /// Word unigrams (and optionally bigrams) hashed into `dim` buckets.
    HashedNgrams { dim: usize, seed: u64, bigrams: bool },
    /// Caller-provided dense features of length `dim`.
    Dense { dim: usize },
}

impl FeatureSpace {
    pub fn hashed(dim: usize, seed: u64) -> Self {
        FeatureSpace::HashedNgrams {
            dim,
            seed,
            bigrams: true,
        }
    }

    pub fn dim(&self) -> usize {
        match *self {
            FeatureSpace::HashedNgrams { dim, .. } | FeatureSpace::Dense { dim } => dim,
        }
    }

    pub fn hash_seed(&self) -> u64 {
        match *self {
            FeatureSpace::HashedNgrams { seed, .. } => seed,
            FeatureSpace::Dense { .. } => 0,
        }
    }

    fn describe(&self) -> String {
        match *self {
            FeatureSpace::HashedNgrams { dim, seed, bigrams } => {
                format!("hashed-ngrams(dim={dim}, seed={seed}, bigrams={bigrams})")
            }
            FeatureSpace::Dense { dim } => format!("dense(dim={dim})"),
        }
    }

    pub fn featurize_text(&self, text: &str) -> Result<FeatureVector> {
        match *self {
            FeatureSpace::HashedNgrams { dim, seed, bigrams } => {
                featurize_with(text, dim, seed, bigrams)
            }
            FeatureSpace::Dense { .. } => Err(ScorerError::SpaceMismatch {
                model: self.describe(),
                caller: "text".into(),
            }),
        }
    }
}

fn fnv1a(seed: u64, parts: &[&[u8]]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for b in seed.to_le_bytes() {
        h = (h ^ u64::from(b)).wrapping_mul(PRIME);
    }
    for part in parts {
        for &b in *part {
            h = (h ^ u64::from(b)).wrapping_mul(PRIME);
        }
        // part separator
        h = (h ^ 0x1f).wrapping_mul(PRIME);
    }
    h
}

fn tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| {
            t.trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase()
        })
        .filter(|t| !t.is_empty())
        .collect()
}

/// Hashed unigram + bigram term frequencies, L2-normalized.
pub fn featurize(text: &str, feature_dim: usize, hash_seed: u64) -> Result<FeatureVector> {
    featurize_with(text, feature_dim, hash_seed, true)
}

fn featurize_with(text: &str, dim: usize, seed: u64, bigrams: bool) -> Result<FeatureVector> {
    if dim < 2 || !dim.is_power_of_two() || dim > u32::MAX as usize {
        return Err(ScorerError::InvalidDimension(dim));
    }
    let mask = (dim - 1) as u64;
    let toks = tokens(text);
    let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
    for tok in &toks {
        let b = (fnv1a(seed, &[b"u", tok.as_bytes()]) & mask) as u32;
        *counts.entry(b).or_default() += 1.0;
    }
    if bigrams {
        for pair in toks.windows(2) {
            let b = (fnv1a(seed, &[b"b", pair[0].as_bytes(), pair[1].as_bytes()]) & mask) as u32;
            *counts.entry(b).or_default() += 1.0;
        }
    }
    let norm = counts.values().map(|v| v * v).sum::<f64>().sqrt();
    let (indices, values) = counts
        .into_iter()
        .map(|(i, c)| (i, if norm > 0.0 { c / norm } else { 0.0 }))
        .unzip();
    Ok(FeatureVector { indices, values })
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Something that maps features to a score in `[0, 1]`.
pub trait Scorer: Send + Sync {
    fn score(&self, features: &FeatureVector) -> Result<f64>;
}

/// Produces a fresh scorer from the labeled examples collected so far.
pub trait ScorerFactory: Sync {
    type Model: Scorer;

    fn fit(&self, examples: &[(FeatureVector, Label)]) -> Result<Self::Model>;
}

/// Parameters of the linear scorer.
#[derive(Clone, Debug, PartialEq)]
pub struct ScorerParams {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub space: FeatureSpace,
}

impl ScorerParams {
    pub fn zeros(space: FeatureSpace) -> Self {
        ScorerParams {
            weights: vec![0.0; space.dim()],
            bias: 0.0,
            space,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.len()
    }

    pub fn hash_seed(&self) -> u64 {
        self.space.hash_seed()
    }

    pub fn logit(&self, features: &FeatureVector) -> Result<f64> {
        let dim = self.weights.len();
        let mut z = self.bias;
        for (&i, &v) in features.indices.iter().zip(&features.values) {
            let w = self
                .weights
                .get(i as usize)
                .ok_or(ScorerError::DimensionMismatch { index: i, dim })?;
            z += w * v;
        }
        Ok(z)
    }

    /// Ensures this model was trained in `space`.
    pub fn check_space(&self, space: &FeatureSpace) -> Result<()> {
        if &self.space == space {
            Ok(())
        } else {
            Err(ScorerError::SpaceMismatch {
                model: self.space.describe(),
                caller: space.describe(),
            })
        }
    }

    /// Text model file: a header naming the featurizer followed by the
    /// non-zero weights. Floats use shortest round-trip formatting, so a
    /// decode of the encoding reproduces the parameters bit for bit.
    pub fn to_model_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MODEL_MAGIC} v{MODEL_VERSION}");
        match self.space {
            FeatureSpace::HashedNgrams { seed, bigrams, .. } => {
                let _ = writeln!(
                    out,
                    "featurizer hashed-ngrams {}",
                    if bigrams { "bigrams" } else { "unigrams" }
                );
                let _ = writeln!(out, "feature_dim {}", self.weights.len());
                let _ = writeln!(out, "hash_seed {seed}");
            }
            FeatureSpace::Dense { .. } => {
                let _ = writeln!(out, "featurizer dense");
                let _ = writeln!(out, "feature_dim {}", self.weights.len());
                let _ = writeln!(out, "hash_seed 0");
            }
        }
        let _ = writeln!(out, "bias {:?}", self.bias);
        let nonzero: Vec<(usize, f64)> = self
            .weights
            .iter()
            .copied()
            .enumerate()
            .filter(|(_, w)| *w != 0.0 || w.is_sign_negative())
            .collect();
        let _ = writeln!(out, "nonzero {}", nonzero.len());
        for (i, w) in nonzero {
            let _ = writeln!(out, "w {i} {w:?}");
        }
        out
    }

    pub fn from_model_str(text: &str) -> Result<Self> {
        let bad = |msg: String| ScorerError::ModelFormat(msg);
        let mut lines = text.lines().enumerate();
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| bad(format!("missing {what} line")))
        };

        let (_, header) = next("header")?;
        let version = header
            .strip_prefix(MODEL_MAGIC)
            .and_then(|r| r.trim().strip_prefix('v'))
            .ok_or_else(|| bad("bad magic".into()))?;
        if version.parse::<u32>().ok() != Some(MODEL_VERSION) {
            return Err(bad(format!("unsupported version {version:?}")));
        }

        let (_, feat) = next("featurizer")?;
        let feat: Vec<&str> = feat.split_whitespace().collect();
        let kind = match feat.as_slice() {
            ["featurizer", "hashed-ngrams", "bigrams"] => Some(true),
            ["featurizer", "hashed-ngrams", "unigrams"] => Some(false),
            ["featurizer", "dense"] => None,
            _ => return Err(bad(format!("bad featurizer line {feat:?}"))),
        };

        fn field<T: std::str::FromStr>(line: (usize, &str), key: &str) -> Result<T> {
            let (no, line) = line;
            line.strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .and_then(|r| r.trim().parse().ok())
                .ok_or_else(|| ScorerError::ModelFormat(format!("line {}: expected {key}", no + 1)))
        }

        let dim: usize = field(next("feature_dim")?, "feature_dim")?;
        if dim < 1 || (kind.is_some() && (dim < 2 || !dim.is_power_of_two())) || dim > 1 << 30 {
            return Err(ScorerError::InvalidDimension(dim));
        }
        let seed: u64 = field(next("hash_seed")?, "hash_seed")?;
        let bias: f64 = field(next("bias")?, "bias")?;
        if !bias.is_finite() {
            return Err(bad("non-finite bias".into()));
        }
        let count: usize = field(next("nonzero")?, "nonzero")?;
        if count > dim {
            return Err(bad(format!("{count} weights exceed dimension {dim}")));
        }

        let mut weights = vec![0.0; dim];
        let mut last: Option<usize> = None;
        for _ in 0..count {
            let (no, line) = next("weight")?;
            let mut parts = line.split_whitespace();
            let (Some("w"), Some(i), Some(v), None) =
                (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(bad(format!("line {}: malformed weight", no + 1)));
            };
            let i: usize = i
                .parse()
                .map_err(|_| bad(format!("line {}: bad index", no + 1)))?;
            let v: f64 = v
                .parse()
                .map_err(|_| bad(format!("line {}: bad value", no + 1)))?;
            if i >= dim || last.is_some_and(|l| i <= l) || !v.is_finite() {
                return Err(bad(format!("line {}: invalid weight entry", no + 1)));
            }
            weights[i] = v;
            last = Some(i);
        }
        if lines.any(|(_, l)| !l.trim().is_empty()) {
            return Err(bad("trailing content".into()));
        }

        let space = match kind {
            Some(bigrams) => FeatureSpace::HashedNgrams { dim, seed, bigrams },
            None => FeatureSpace::Dense { dim },
        };
        Ok(ScorerParams {
            weights,
            bias,
            space,
        })
    }
}

impl Scorer for ScorerParams {
    fn score(&self, features: &FeatureVector) -> Result<f64> {
        Ok(sigmoid(self.logit(features)?))
    }
}

/// `score(params, features) = sigmoid(w·x + b)`.
pub fn score(params: &ScorerParams, features: &FeatureVector) -> Result<f64> {
    params.score(features)
}

/// Focal loss of a prediction `p = P(class 1)` for true class `y`:
/// `-alpha_y (1 - p_y)^gamma ln(p_y)` with `p_y` the probability assigned to
/// `y`, clamped to `[PROB_EPS, 1 - PROB_EPS]`.
pub fn focal_loss(p: f64, y: Label, alpha_y: f64, gamma: f64) -> f64 {
    let p_y = prob_of(p, y).clamp(PROB_EPS, 1.0 - PROB_EPS);
    -alpha_y * (1.0 - p_y).powf(gamma) * p_y.ln()
}

/// Derivative of [`focal_loss`] with respect to the logit `z` where
/// `p = sigmoid(z)`:
/// `±alpha_y (1 - p_y)^gamma (gamma p_y ln p_y - (1 - p_y))`, `+` for `y = 1`.
pub fn focal_loss_gradient(p: f64, y: Label, alpha_y: f64, gamma: f64) -> f64 {
    let q = prob_of(p, y).clamp(PROB_EPS, 1.0 - PROB_EPS);
    let one_minus = 1.0 - q;
    let g = alpha_y * one_minus.powf(gamma) * (gamma * q * q.ln() - one_minus);
    match y {
        Label::One => g,
        Label::Zero => -g,
    }
}

fn prob_of(p: f64, y: Label) -> f64 {
    match y {
        Label::One => p,
        Label::Zero => 1.0 - p,
    }
}

/// Class weights for focal loss: `alpha` on the minority class and
/// `1 - alpha` on the majority class.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassWeights {
    pub minority: Label,
    pub alpha: f64,
}

impl ClassWeights {
    /// Minority class and its running fraction in `labels`. With a single
    /// observed class the absent class is the minority and `alpha` is 0.
    pub fn from_labels<'a, I: IntoIterator<Item = &'a Label>>(labels: I) -> Self {
        let (mut zeros, mut ones) = (0usize, 0usize);
        for l in labels {
            match l {
                Label::Zero => zeros += 1,
                Label::One => ones += 1,
            }
        }
        let total = (zeros + ones).max(1) as f64;
        if zeros <= ones {
            ClassWeights {
                minority: Label::Zero,
                alpha: zeros as f64 / total,
            }
        } else {
            ClassWeights {
                minority: Label::One,
                alpha: ones as f64 / total,
            }
        }
    }

    pub fn weight(&self, y: Label) -> f64 {
        if y == self.minority {
            self.alpha
        } else {
            1.0 - self.alpha
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub focal_gamma: f64,
    /// Minority-class weight; `None` uses the minority fraction of the
    /// labeled set at fit time.
    pub focal_alpha: Option<f64>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            focal_gamma: 5.0,
            focal_alpha: None,
            learning_rate: 0.5,
            epochs: 5,
            batch_size: 16,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ScorerError::InvalidConfig(m.into()));
        if !(self.focal_gamma >= 0.0 && self.focal_gamma.is_finite()) {
            return bad("focal_gamma must be >= 0");
        }
        if let Some(a) = self.focal_alpha {
            if !(a > 0.0 && a < 1.0) {
                return bad("focal_alpha must lie in (0, 1)");
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        Ok(())
    }

    pub fn class_weights(&self, examples: &[(FeatureVector, Label)]) -> ClassWeights {
        let mut w = ClassWeights::from_labels(examples.iter().map(|(_, l)| l));
        if let Some(a) = self.focal_alpha {
            w.alpha = a;
        }
        w
    }
}

/// Mean focal loss of `params` over `examples`.
pub fn mean_focal_loss(
    params: &ScorerParams,
    examples: &[(FeatureVector, Label)],
    weights: ClassWeights,
    gamma: f64,
) -> Result<f64> {
    if examples.is_empty() {
        return Err(ScorerError::NoExamples);
    }
    let mut total = 0.0;
    for (x, y) in examples {
        total += focal_loss(params.score(x)?, *y, weights.weight(*y), gamma);
    }
    Ok(total / examples.len() as f64)
}

/// Mini-batch gradient descent on mean focal loss from a zero
/// initialization, cosine-decayed step size, returning the final-epoch
/// parameters. Deterministic for a fixed `config.seed`.
pub fn fit(
    examples: &[(FeatureVector, Label)],
    space: FeatureSpace,
    config: &TrainConfig,
) -> Result<ScorerParams> {
    config.validate()?;
    if examples.is_empty() {
        return Err(ScorerError::NoExamples);
    }
    let mut params = ScorerParams::zeros(space);
    for (x, _) in examples {
        if let Some(&i) = x.indices.iter().find(|&&i| i as usize >= params.weights.len()) {
            return Err(ScorerError::DimensionMismatch {
                index: i,
                dim: params.weights.len(),
            });
        }
    }
    let weights = config.class_weights(examples);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let batches_per_epoch = examples.len().div_ceil(config.batch_size);
    let total_steps = (batches_per_epoch * config.epochs) as f64;
    let mut step = 0usize;
    let mut grad: BTreeMap<u32, f64> = BTreeMap::new();

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let lr = config.learning_rate
                * 0.5
                * (1.0 + (std::f64::consts::PI * step as f64 / total_steps).cos());
            grad.clear();
            let mut grad_bias = 0.0;
            for &k in batch {
                let (x, y) = &examples[k];
                let p = sigmoid(params.logit(x)?);
                let g = focal_loss_gradient(p, *y, weights.weight(*y), config.focal_gamma);
                grad_bias += g;
                for (&i, &v) in x.indices.iter().zip(&x.values) {
                    *grad.entry(i).or_default() += g * v;
                }
            }
            let scale = lr / batch.len() as f64;
            for (&i, &g) in &grad {
                params.weights[i as usize] -= scale * g;
            }
            params.bias -= scale * grad_bias;
            step += 1;
        }
    }
    Ok(params)
}

/// Fits [`ScorerParams`] in a fixed feature space.
#[derive(Clone, Debug)]
pub struct LinearScorerFactory {
    pub space: FeatureSpace,
    pub config: TrainConfig,
}

impl ScorerFactory for LinearScorerFactory {
    type Model = ScorerParams;

    fn fit(&self, examples: &[(FeatureVector, Label)]) -> Result<ScorerParams> {
        fit(examples, self.space, &self.config)
    }
}

/// Reads a precomputed score from feature 0. Used when the scores of a
/// stream are fixed in advance and only the selection rule is under test.
#[derive(Clone, Copy, Debug, Default)]
pub struct PassthroughScorer;

impl PassthroughScorer {
    pub fn features(score: f64) -> FeatureVector {
        FeatureVector {
            indices: vec![0],
            values: vec![score],
        }
    }
}

impl Scorer for PassthroughScorer {
    fn score(&self, features: &FeatureVector) -> Result<f64> {
        let v = match (features.indices.first(), features.values.first()) {
            (Some(0), Some(&v)) => v,
            _ => 0.0,
        };
        Ok(v.clamp(0.0, 1.0))
    }
}

impl ScorerFactory for PassthroughScorer {
    type Model = PassthroughScorer;

    fn fit(&self, _examples: &[(FeatureVector, Label)]) -> Result<PassthroughScorer> {
        Ok(PassthroughScorer)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn featurize_empty_is_zero() {
        let f = featurize("", 1024, 7).unwrap();
        assert!(f.indices.is_empty());
        assert!(f.is_zero());
        assert!(featurize("  ...  ", 1024, 7).unwrap().indices.is_empty());
    }

    #[test]
    fn featurize_is_deterministic_and_normalized() {
        let text = "The quick brown fox jumps over the lazy dog. The end.";
        let a = featurize(text, 1 << 16, 3).unwrap();
        let b = featurize(text, 1 << 16, 3).unwrap();
        assert_eq!(a, b);
        assert!((a.l2_norm() - 1.0).abs() < 1e-12);
        assert!(a.indices.windows(2).all(|w| w[0] < w[1]));
        assert!(a.indices.iter().all(|&i| (i as usize) < 1 << 16));
        assert_ne!(a, featurize(text, 1 << 16, 4).unwrap());
    }

    #[test]
    fn featurize_bigrams_see_order() {
        let ab = featurize("a b", 1 << 20, 0).unwrap();
        let ba = featurize("b a", 1 << 20, 0).unwrap();
        assert_ne!(ab, ba);
        let space = FeatureSpace::HashedNgrams {
            dim: 1 << 20,
            seed: 0,
            bigrams: false,
        };
        assert_eq!(
            space.featurize_text("a b").unwrap(),
            space.featurize_text("b a").unwrap()
        );
    }

    #[test]
    fn featurize_rejects_bad_dims() {
        assert_eq!(featurize("x", 1, 0), Err(ScorerError::InvalidDimension(1)));
        assert_eq!(featurize("x", 100, 0), Err(ScorerError::InvalidDimension(100)));
    }

    #[test]
    fn zero_model_scores_half() {
        let params = ScorerParams::zeros(FeatureSpace::hashed(16, 0));
        let x = featurize("anything at all", 16, 0).unwrap();
        assert_eq!(score(&params, &x).unwrap(), 0.5);
    }

    #[test]
    fn score_examples() {
        let mut params = ScorerParams::zeros(FeatureSpace::Dense { dim: 2 });
        params.weights[0] = 1.0;
        let s = score(&params, &FeatureVector::dense(&[1.0, 0.0])).unwrap();
        assert!((s - 0.7311).abs() < 5e-5);
        params.weights[0] = 1e6;
        assert!(score(&params, &FeatureVector::dense(&[1.0, 0.0])).unwrap() > 0.999999);
        let err = score(&params, &FeatureVector::dense(&[1.0, 0.0, 1.0])).unwrap_err();
        assert_eq!(err, ScorerError::DimensionMismatch { index: 2, dim: 2 });
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert!(sigmoid(-30.0) > 0.0);
    }

    #[test]
    fn focal_loss_examples() {
        assert!(focal_loss(1.0, Label::One, 1.0, 5.0) < 1e-11);
        assert!((focal_loss(0.5, Label::One, 1.0, 0.0) - std::f64::consts::LN_2).abs() < 1e-4);
        let v = focal_loss(0.9, Label::One, 0.5, 5.0);
        assert!((v - 5.268e-7).abs() < 1e-10, "{v}");
        // p_y for class 0 is 1 - p
        assert_eq!(focal_loss(0.1, Label::Zero, 0.5, 5.0), focal_loss(0.9, Label::One, 0.5, 5.0));
    }

    #[test]
    fn focal_gradient_reduces_to_cross_entropy() {
        for &p in &[0.01, 0.3, 0.5, 0.77, 0.99] {
            let g1 = focal_loss_gradient(p, Label::One, 1.0, 0.0);
            let g0 = focal_loss_gradient(p, Label::Zero, 1.0, 0.0);
            assert!((g1 - (p - 1.0)).abs() < 1e-12);
            assert!((g0 - p).abs() < 1e-12);
        }
        assert!(focal_loss_gradient(1.0 - 1e-9, Label::One, 0.7, 2.0).abs() < 1e-15);
    }

    #[test]
    fn class_weights_follow_minority() {
        let labels = [Label::Zero, Label::One, Label::One, Label::One];
        let w = ClassWeights::from_labels(&labels);
        assert_eq!(w.minority, Label::Zero);
        assert_eq!(w.alpha, 0.25);
        assert_eq!(w.weight(Label::One), 0.75);
        let only_zero = ClassWeights::from_labels(&[Label::Zero, Label::Zero]);
        assert_eq!(only_zero.minority, Label::One);
        assert_eq!(only_zero.weight(Label::Zero), 1.0);
    }

    fn two_points() -> Vec<(FeatureVector, Label)> {
        vec![
            (FeatureVector::dense(&[1.0, 0.0]), Label::One),
            (FeatureVector::dense(&[0.0, 1.0]), Label::Zero),
        ]
    }

    #[test]
    fn fit_separates_two_points() {
        let config = TrainConfig {
            focal_gamma: 2.0,
            focal_alpha: Some(0.5),
            learning_rate: 2.0,
            epochs: 200,
            batch_size: 2,
            seed: 1,
        };
        let space = FeatureSpace::Dense { dim: 2 };
        let data = two_points();
        let params = fit(&data, space, &config).unwrap();
        let loss = mean_focal_loss(&params, &data, config.class_weights(&data), 2.0).unwrap();
        assert!(loss < 0.1, "loss {loss}");
        assert!(params.score(&data[0].0).unwrap() > 0.5);
        assert!(params.score(&data[1].0).unwrap() < 0.5);
    }

    #[test]
    fn fit_single_class_pushes_down() {
        let space = FeatureSpace::Dense { dim: 2 };
        let data = vec![
            (FeatureVector::dense(&[1.0, 0.0]), Label::Zero),
            (FeatureVector::dense(&[0.0, 1.0]), Label::Zero),
            (FeatureVector::dense(&[0.5, 0.5]), Label::Zero),
        ];
        let params = fit(&data, space, &TrainConfig::default()).unwrap();
        for (x, _) in &data {
            assert!(params.score(x).unwrap() < 0.5);
        }
        assert!(params.score(&FeatureVector::default()).unwrap() < 0.5);
    }

    #[test]
    fn fit_is_deterministic() {
        let space = FeatureSpace::hashed(256, 9);
        let data: Vec<_> = (0..40)
            .map(|i| {
                let text = format!("token{} common words here {}", i % 7, i % 3);
                (space.featurize_text(&text).unwrap(), Label::from_bool(i % 7 == 0))
            })
            .collect();
        let config = TrainConfig {
            seed: 11,
            ..TrainConfig::default()
        };
        let a = fit(&data, space, &config).unwrap();
        let b = fit(&data, space, &config).unwrap();
        assert_eq!(a, b);
        assert!(a.weights.iter().all(|w| w.is_finite()));
    }

    #[test]
    fn fit_errors() {
        let space = FeatureSpace::Dense { dim: 2 };
        assert_eq!(fit(&[], space, &TrainConfig::default()), Err(ScorerError::NoExamples));
        let bad = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(fit(&two_points(), space, &bad), Err(ScorerError::InvalidConfig(_))));
        let wide = vec![(FeatureVector::dense(&[1.0, 1.0, 1.0]), Label::One)];
        assert!(matches!(
            fit(&wide, space, &TrainConfig::default()),
            Err(ScorerError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn model_file_round_trip() {
        let space = FeatureSpace::hashed(64, 5);
        let mut params = ScorerParams::zeros(space);
        params.weights[3] = 0.1 + 0.2;
        params.weights[40] = -1e-300;
        params.bias = -0.123456789012345;
        let text = params.to_model_string();
        assert!(text.starts_with("sieve-linear-model v1\n"));
        assert_eq!(ScorerParams::from_model_str(&text).unwrap(), params);

        let dense = ScorerParams::zeros(FeatureSpace::Dense { dim: 2 });
        assert_eq!(
            ScorerParams::from_model_str(&dense.to_model_string()).unwrap(),
            dense
        );
    }

    #[test]
    fn model_file_rejects_garbage() {
        for text in [
            "",
            "not-a-model v1\n",
            "sieve-linear-model v2\n",
            "sieve-linear-model v1\nfeaturizer dense\nfeature_dim 2\nhash_seed 0\nbias NaN\nnonzero 0\n",
            "sieve-linear-model v1\nfeaturizer hashed-ngrams bigrams\nfeature_dim 3\nhash_seed 0\nbias 0\nnonzero 0\n",
            "sieve-linear-model v1\nfeaturizer dense\nfeature_dim 2\nhash_seed 0\nbias 0\nnonzero 1\nw 5 1.0\n",
            "sieve-linear-model v1\nfeaturizer dense\nfeature_dim 2\nhash_seed 0\nbias 0\nnonzero 2\nw 1 1.0\nw 0 1.0\n",
            "sieve-linear-model v1\nfeaturizer dense\nfeature_dim 2\nhash_seed 0\nbias 0\nnonzero 0\nextra\n",
        ] {
            assert!(ScorerParams::from_model_str(text).is_err(), "{text:?}");
        }
    }

    #[test]
    fn space_check() {
        let params = ScorerParams::zeros(FeatureSpace::hashed(64, 5));
        assert!(params.check_space(&FeatureSpace::hashed(64, 5)).is_ok());
        assert!(matches!(
            params.check_space(&FeatureSpace::hashed(128, 5)),
            Err(ScorerError::SpaceMismatch { .. })
        ));
    }

    #[test]
    fn passthrough_reads_feature_zero() {
        let s = PassthroughScorer;
        assert_eq!(s.score(&PassthroughScorer::features(0.42)).unwrap(), 0.42);
        assert_eq!(s.score(&FeatureVector::default()).unwrap(), 0.0);
    }
}
