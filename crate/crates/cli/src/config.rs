//! The merged run configuration: built-in defaults, then a TOML file, then
//! environment variables and flags (the last two resolved by clap).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sieve_core::distiller::{DistillConfig, Strategy};
use sieve_core::oracle::{LlmConfig, PromptTemplate, RetryPolicy, TemplateName, DEFAULT_MICRO_USD_PER_QUERY};
use sieve_core::scorer::{FeatureSpace, TrainConfig};

use crate::UsageError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputSection {
    /// Snippet store directory (text runs).
    pub store: Option<PathBuf>,
    /// Synthetic instance JSON (fixed-score runs).
    pub instance: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillSection {
    pub strategy: String,
    pub band: f64,
    pub budget: usize,
    pub batch: usize,
    pub delta: f64,
    pub seed: u64,
    pub parallelism: usize,
    pub intersect_updates: bool,
    pub first_update_t: u64,
}

impl Default for DistillSection {
    fn default() -> Self {
        DistillSection {
            strategy: "sieve".into(),
            band: Strategy::DEFAULT_BAND,
            budget: 1_000,
            batch: 100,
            delta: 0.1,
            seed: 0,
            parallelism: sieve_core::oracle::DEFAULT_PARALLELISM,
            intersect_updates: false,
            first_update_t: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    /// `sim`, `replay`, or `llm`.
    pub kind: String,
    /// Built-in template name or `custom:PATH`.
    pub prompt: String,
    pub replay: Option<PathBuf>,
    /// Class-0 keywords of the simulated text oracle.
    pub sim_keywords: Vec<String>,
    pub sim_noise: f64,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub micro_usd_per_query: u64,
    pub timeout_ms: u64,
    pub retry_attempts: u32,
    pub retry_base_delay_ms: u64,
}

impl Default for OracleSection {
    fn default() -> Self {
        let retry = RetryPolicy::default();
        OracleSection {
            kind: "sim".into(),
            prompt: "quality".into(),
            replay: None,
            sim_keywords: Vec::new(),
            sim_noise: 0.0,
            endpoint: None,
            model: None,
            micro_usd_per_query: DEFAULT_MICRO_USD_PER_QUERY,
            timeout_ms: 120_000,
            retry_attempts: retry.attempts,
            retry_base_delay_ms: retry.base_delay_ms,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerSection {
    pub feature_dim: usize,
    pub hash_seed: u64,
    pub focal_gamma: f64,
    pub focal_alpha: Option<f64>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub train_batch: usize,
}

impl Default for ScorerSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        ScorerSection {
            feature_dim: 1 << 18,
            hash_seed: 0,
            focal_gamma: t.focal_gamma,
            focal_alpha: t.focal_alpha,
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            train_batch: t.batch_size,
        }
    }
}

/// Everything a distillation run depends on. Written verbatim (minus
/// secrets) into the output directory so the run can be repeated with
/// `--config OUT/run_config.toml`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: InputSection,
    pub distill: DistillSection,
    pub oracle: OracleSection,
    pub scorer: ScorerSection,
    pub out: Option<PathBuf>,
}

pub const RUN_CONFIG_FILE: &str = "run_config.toml";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OracleKind {
    Sim,
    Replay,
    Llm,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, UsageError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| UsageError(format!("invalid config {}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }

    pub fn strategy(&self) -> Result<Strategy, UsageError> {
        match self.distill.strategy.as_str() {
            "sieve" => Ok(Strategy::Sieve),
            "random" => Ok(Strategy::Random),
            "uncertainty" => Ok(Strategy::Uncertainty { band: self.distill.band }),
            other => Err(UsageError(format!(
                "unknown strategy {other:?} (expected sieve, random, or uncertainty)"
            ))),
        }
    }

    pub fn oracle_kind(&self) -> Result<OracleKind, UsageError> {
        match self.oracle.kind.as_str() {
            "sim" => Ok(OracleKind::Sim),
            "replay" => Ok(OracleKind::Replay),
            "llm" => Ok(OracleKind::Llm),
            other => Err(UsageError(format!("unknown oracle {other:?} (expected sim, replay, or llm)"))),
        }
    }

    pub fn template(&self) -> Result<PromptTemplate, UsageError> {
        let t = match self.oracle.prompt.strip_prefix("custom:") {
            Some(path) => {
                let body = std::fs::read_to_string(path)
                    .map_err(|e| UsageError(format!("cannot read prompt {path}: {e}")))?;
                PromptTemplate::custom(body)
            }
            None => self
                .oracle
                .prompt
                .parse::<TemplateName>()
                .and_then(PromptTemplate::builtin),
        };
        t.map_err(|e| UsageError(e.to_string()))
    }

    pub fn distill_config(&self, stream_length: u64) -> Result<DistillConfig, UsageError> {
        let d = &self.distill;
        let mut c = DistillConfig::new(d.batch, d.budget, stream_length);
        c.delta = d.delta;
        c.strategy = self.strategy()?;
        c.parallelism = d.parallelism;
        c.intersect_updates = d.intersect_updates;
        c.first_update_t = d.first_update_t;
        c.validate().map_err(|e| UsageError(e.to_string()))?;
        Ok(c)
    }

    pub fn space(&self) -> Result<FeatureSpace, UsageError> {
        let dim = self.scorer.feature_dim;
        if dim < 2 || !dim.is_power_of_two() {
            return Err(UsageError(format!("feature_dim {dim} must be a power of two >= 2")));
        }
        Ok(FeatureSpace::hashed(dim, self.scorer.hash_seed))
    }

    pub fn train_config(&self) -> Result<TrainConfig, UsageError> {
        let s = &self.scorer;
        let t = TrainConfig {
            focal_gamma: s.focal_gamma,
            focal_alpha: s.focal_alpha,
            learning_rate: s.learning_rate,
            epochs: s.epochs,
            batch_size: s.train_batch,
            seed: self.distill.seed,
        };
        t.validate().map_err(|e| UsageError(e.to_string()))?;
        Ok(t)
    }

    /// The chat-endpoint settings; the token only ever comes from the
    /// environment.
    pub fn llm_config(&self, token: Option<String>) -> Result<LlmConfig, UsageError> {
        let endpoint = self.oracle.endpoint.clone().ok_or_else(|| {
            UsageError("--oracle llm needs an endpoint (--endpoint or SIEVE_LLM_ENDPOINT)".into())
        })?;
        let model = self
            .oracle
            .model
            .clone()
            .ok_or_else(|| UsageError("--oracle llm needs a model name (--model or SIEVE_LLM_MODEL)".into()))?;
        let mut c = LlmConfig::new(endpoint, model);
        c.token = token;
        c.micro_usd_per_query = self.oracle.micro_usd_per_query;
        c.timeout_ms = self.oracle.timeout_ms;
        c.retry = RetryPolicy {
            attempts: self.oracle.retry_attempts,
            base_delay_ms: self.oracle.retry_base_delay_ms,
            ..RetryPolicy::default()
        };
        c.validate().map_err(|e| UsageError(e.to_string()))?;
        Ok(c)
    }

    /// Checks everything that can be checked without doing work.
    pub fn validate(&self) -> Result<(), UsageError> {
        match (&self.input.store, &self.input.instance) {
            (Some(_), Some(_)) => return Err(UsageError("give either --store or --instance, not both".into())),
            (None, None) => return Err(UsageError("an input is required (--store DIR or --instance FILE)".into())),
            _ => {}
        }
        if self.out.is_none() {
            return Err(UsageError("an output directory is required (--out DIR)".into()));
        }
        self.strategy()?;
        self.space()?;
        self.train_config()?;
        self.distill_config(u64::MAX)?;
        let kind = self.oracle_kind()?;
        if self.input.instance.is_some() && kind != OracleKind::Sim {
            return Err(UsageError("synthetic instances are labeled by the sim oracle only".into()));
        }
        match kind {
            OracleKind::Sim if self.input.store.is_some() && self.oracle.sim_keywords.is_empty() => {
                Err(UsageError("--oracle sim over a store needs --sim-keywords".into()))
            }
            OracleKind::Replay if self.oracle.replay.is_none() => {
                Err(UsageError("--oracle replay needs --replay PATH".into()))
            }
            OracleKind::Llm => {
                self.template()?;
                self.llm_config(None).map(|_| ())
            }
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = RunConfig::default();
        assert_eq!(toml::from_str::<RunConfig>(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn partial_files_keep_defaults() {
        let c: RunConfig = toml::from_str("[distill]\nbudget = 64\n").unwrap();
        assert_eq!(c.distill.budget, 64);
        assert_eq!(c.distill.batch, DistillSection::default().batch);
        assert!(toml::from_str::<RunConfig>("[distill]\nbudgett = 64\n").is_err());
    }

    #[test]
    fn validation_messages() {
        let mut c = RunConfig::default();
        assert!(c.validate().unwrap_err().0.contains("input is required"));
        c.input.instance = Some("i.json".into());
        c.out = Some("o".into());
        assert!(c.validate().is_ok());
        c.oracle.kind = "llm".into();
        assert!(c.validate().is_err());
        c.input = InputSection {
            store: Some("s".into()),
            instance: None,
        };
        assert!(c.validate().unwrap_err().0.contains("endpoint"));
        c.oracle.endpoint = Some("http://localhost:9/v1".into());
        c.oracle.model = Some("m".into());
        assert!(c.validate().is_ok());
        c.distill.strategy = "greedy".into();
        assert!(c.validate().is_err());
    }
}
