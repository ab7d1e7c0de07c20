//! Labeling oracles: anything that turns a snippet into a hard `{0, 1}`
//! decision. Implementations must tolerate concurrent `label` calls.

mod ledger;
mod llm;
mod prompt;
mod replay;

use std::collections::HashMap;
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::Label;
use crate::snippet::{Snippet, SnippetId};

pub use ledger::{format_usd, CostLedger, RoundCost, DEFAULT_MICRO_USD_PER_QUERY, MICRO_USD_PER_USD};
pub use llm::{parse_chat_response, LlmClient, LlmConfig, LlmOracle, RetryPolicy};
pub use prompt::{parse_verdict, render_prompt, PromptTemplate, TemplateName, PLACEHOLDER};
pub use replay::{CachedOracle, ReplayOracle, ReplayRecord, ReplayStore};

/// Default number of concurrent in-flight oracle calls.
pub const DEFAULT_PARALLELISM: usize = 16;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("oracle unavailable after {attempts} attempt(s): {reason}")]
    OracleUnavailable { attempts: u32, reason: String },
    #[error("oracle returned HTTP {status}: {body}")]
    HttpStatus { status: u16, body: String },
    #[error("no PASS/FAIL verdict at the end of the response")]
    UnparseableVerdict {
        raw: String,
        /// Cost of the query that produced the unusable answer.
        cost_micro_usd: u64,
    },
    #[error("no replay record for snippet {0}")]
    ReplayMiss(SnippetId),
    #[error("replay store corrupt: {0}")]
    Corruption(String),
    #[error("snippet {0} is unknown to this oracle")]
    UnknownSnippet(SnippetId),
    #[error("invalid prompt template: {0}")]
    InvalidTemplate(String),
    #[error("invalid oracle configuration: {0}")]
    InvalidConfig(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl OracleError {
    /// Money spent on the failed call (non-zero only when the oracle
    /// answered but the answer was unusable).
    pub fn cost_micro_usd(&self) -> u64 {
        match self {
            OracleError::UnparseableVerdict { cost_micro_usd, .. } => *cost_micro_usd,
            _ => 0,
        }
    }
}

pub type Result<T> = std::result::Result<T, OracleError>;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleResponse {
    pub snippet_id: SnippetId,
    pub label: Label,
    pub raw_text: Option<String>,
    pub latency_ms: u64,
    pub cost_micro_usd: u64,
}

impl OracleResponse {
    pub fn cost_usd(&self) -> f64 {
        self.cost_micro_usd as f64 / MICRO_USD_PER_USD as f64
    }
}

pub trait Oracle: Send + Sync {
    fn label(&self, snippet: &Snippet) -> Result<OracleResponse>;
}

impl<O: Oracle + ?Sized> Oracle for &O {
    fn label(&self, snippet: &Snippet) -> Result<OracleResponse> {
        (**self).label(snippet)
    }
}

impl<O: Oracle + ?Sized> Oracle for Box<O> {
    fn label(&self, snippet: &Snippet) -> Result<OracleResponse> {
        (**self).label(snippet)
    }
}

/// Bernoulli oracle over a known `eta`, where `eta[id]` is the probability
/// of answering class 0 for the snippet with that id.
///
/// The k-th draw for a given id comes from its own generator seeded by
/// `(seed, id, k)`, so answers do not depend on how calls for different ids
/// interleave across threads.
#[derive(Debug)]
pub struct SimulatedOracle {
    eta: Vec<f64>,
    seed: u64,
    cost_micro_usd: u64,
    draws: Mutex<HashMap<SnippetId, u64>>,
}

impl SimulatedOracle {
    pub fn new(eta: Vec<f64>, seed: u64) -> Result<Self> {
        if let Some((i, v)) = eta
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(OracleError::InvalidConfig(format!(
                "eta[{i}] = {v} is not a probability"
            )));
        }
        Ok(SimulatedOracle {
            eta,
            seed,
            cost_micro_usd: DEFAULT_MICRO_USD_PER_QUERY,
            draws: Mutex::new(HashMap::new()),
        })
    }

    /// Per-query price charged to the ledger.
    pub fn with_cost(mut self, micro_usd: u64) -> Self {
        self.cost_micro_usd = micro_usd;
        self
    }

    pub fn eta(&self) -> &[f64] {
        &self.eta
    }
}

fn mix(mut z: u64) -> u64 {
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Oracle for SimulatedOracle {
    fn label(&self, snippet: &Snippet) -> Result<OracleResponse> {
        let eta = *self
            .eta
            .get(usize::try_from(snippet.id).unwrap_or(usize::MAX))
            .ok_or(OracleError::UnknownSnippet(snippet.id))?;
        let k = {
            let mut draws = self.draws.lock().expect("draw counter poisoned");
            let k = draws.entry(snippet.id).or_insert(0);
            *k += 1;
            *k - 1
        };
        let stream_seed = mix(self.seed ^ mix(snippet.id.wrapping_add(mix(k))));
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed);
        let zero = rng.random::<f64>() < eta;
        Ok(OracleResponse {
            snippet_id: snippet.id,
            label: if zero { Label::Zero } else { Label::One },
            raw_text: None,
            latency_ms: 0,
            cost_micro_usd: self.cost_micro_usd,
        })
    }
}

/// Rule-based oracle over snippet text: class 0 when any keyword occurs
/// (case-insensitive), with each answer flipped with probability `noise`.
/// A flip is a fixed function of `(seed, id)`, so repeated queries agree.
#[derive(Clone, Debug)]
pub struct KeywordOracle {
    keywords: Vec<String>,
    noise: f64,
    seed: u64,
    cost_micro_usd: u64,
}

impl KeywordOracle {
    pub fn new(keywords: &[String], noise: f64, seed: u64) -> Result<Self> {
        let keywords: Vec<String> = keywords
            .iter()
            .map(|k| k.trim().to_lowercase())
            .filter(|k| !k.is_empty())
            .collect();
        if keywords.is_empty() {
            return Err(OracleError::InvalidConfig("keyword oracle needs at least one keyword".into()));
        }
        if !(0.0..=0.5).contains(&noise) {
            return Err(OracleError::InvalidConfig(format!("noise {noise} must lie in [0, 0.5]")));
        }
        Ok(KeywordOracle {
            keywords,
            noise,
            seed,
            cost_micro_usd: DEFAULT_MICRO_USD_PER_QUERY,
        })
    }

    pub fn with_cost(mut self, micro_usd: u64) -> Self {
        self.cost_micro_usd = micro_usd;
        self
    }

    /// The noiseless answer.
    pub fn rule(&self, text: &str) -> Label {
        let lower = text.to_lowercase();
        Label::from_bool(!self.keywords.iter().any(|k| lower.contains(k.as_str())))
    }
}

impl Oracle for KeywordOracle {
    fn label(&self, snippet: &Snippet) -> Result<OracleResponse> {
        let u = (mix(self.seed ^ mix(snippet.id)) >> 11) as f64 / (1u64 << 53) as f64;
        let clean = self.rule(&snippet.text);
        Ok(OracleResponse {
            snippet_id: snippet.id,
            label: if u < self.noise { clean.flip() } else { clean },
            raw_text: None,
            latency_ms: 0,
            cost_micro_usd: self.cost_micro_usd,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_eta_extremes() {
        let oracle = SimulatedOracle::new(vec![1.0, 0.0], 3).unwrap();
        for _ in 0..50 {
            assert_eq!(oracle.label(&Snippet::synthetic(0)).unwrap().label, Label::Zero);
            assert_eq!(oracle.label(&Snippet::synthetic(1)).unwrap().label, Label::One);
        }
    }

    #[test]
    fn fair_coin_frequency() {
        let oracle = SimulatedOracle::new(vec![0.5], 11).unwrap();
        let zeros = (0..10_000)
            .filter(|_| oracle.label(&Snippet::synthetic(0)).unwrap().label == Label::Zero)
            .count();
        let freq = zeros as f64 / 10_000.0;
        assert!((0.48..=0.52).contains(&freq), "{freq}");
    }

    #[test]
    fn answers_are_seeded_per_id() {
        let a = SimulatedOracle::new(vec![0.5; 100], 1).unwrap();
        let b = SimulatedOracle::new(vec![0.5; 100], 1).unwrap();
        let forward: Vec<_> = (0..100)
            .map(|i| a.label(&Snippet::synthetic(i)).unwrap().label)
            .collect();
        let mut backward: Vec<_> = (0..100)
            .rev()
            .map(|i| b.label(&Snippet::synthetic(i)).unwrap().label)
            .collect();
        backward.reverse();
        assert_eq!(forward, backward);
    }

    #[test]
    fn unknown_and_invalid() {
        let oracle = SimulatedOracle::new(vec![0.5], 0).unwrap();
        assert!(matches!(
            oracle.label(&Snippet::synthetic(5)),
            Err(OracleError::UnknownSnippet(5))
        ));
        assert!(SimulatedOracle::new(vec![1.5], 0).is_err());
    }

    #[test]
    fn keyword_rule_and_noise() {
        let kw = vec!["Chess".to_string()];
        let clean = KeywordOracle::new(&kw, 0.0, 1).unwrap();
        assert_eq!(clean.label(&Snippet::new("d", 0, "a CHESS opening")).unwrap().label, Label::Zero);
        assert_eq!(clean.label(&Snippet::new("d", 0, "a garden")).unwrap().label, Label::One);
        let noisy = KeywordOracle::new(&kw, 0.2, 1).unwrap();
        let flips = (0..5_000)
            .filter(|i| noisy.label(&Snippet::new("d", *i, "garden")).unwrap().label == Label::Zero)
            .count();
        assert!((900..=1_100).contains(&flips), "{flips}");
        let s = Snippet::new("d", 3, "garden");
        assert_eq!(noisy.label(&s).unwrap(), noisy.label(&s).unwrap());
        assert!(KeywordOracle::new(&[" ".to_string()], 0.0, 0).is_err());
        assert!(KeywordOracle::new(&kw, 0.7, 0).is_err());
    }

    #[test]
    fn default_cost_is_five_dollars_per_thousand() {
        let oracle = SimulatedOracle::new(vec![0.5], 0).unwrap();
        let r = oracle.label(&Snippet::synthetic(0)).unwrap();
        assert_eq!(r.cost_micro_usd, 5_000);
        assert_eq!(r.cost_usd(), 0.005);
    }
}
