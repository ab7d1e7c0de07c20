use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    parse_verdict, render_prompt, Oracle, OracleError, OracleResponse, PromptTemplate, Result,
    DEFAULT_MICRO_USD_PER_QUERY,
};
use crate::snippet::Snippet;

/// Exponential backoff: wait `base · factor^k` after the k-th failed attempt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay_ms: u64,
    pub factor: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            base_delay_ms: 1_000,
            factor: 4,
        }
    }
}

impl RetryPolicy {
    /// Waits between consecutive attempts (`attempts - 1` entries).
    pub fn delays(&self) -> Vec<Duration> {
        (0..self.attempts.saturating_sub(1))
            .map(|k| {
                let mult = u64::from(self.factor).saturating_pow(k);
                Duration::from_millis(self.base_delay_ms.saturating_mul(mult))
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LlmConfig {
    pub endpoint: String,
    pub token: Option<String>,
    pub model: String,
    pub micro_usd_per_query: u64,
    pub timeout_ms: u64,
    pub retry: RetryPolicy,
}

impl LlmConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        LlmConfig {
            endpoint: endpoint.into(),
            token: None,
            model: model.into(),
            micro_usd_per_query: DEFAULT_MICRO_USD_PER_QUERY,
            timeout_ms: 120_000,
            retry: RetryPolicy::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(OracleError::InvalidConfig(m));
        if !(self.endpoint.starts_with("http://") || self.endpoint.starts_with("https://")) {
            return bad(format!("endpoint {:?} is not an http(s) URL", self.endpoint));
        }
        if self.model.trim().is_empty() {
            return bad("model name is empty".into());
        }
        if self.retry.attempts == 0 {
            return bad("retry attempts must be >= 1".into());
        }
        Ok(())
    }
}

/// Extracts `choices[0].message.content` from a chat-completion body.
pub fn parse_chat_response(body: &str) -> Result<String> {
    let v: Value = serde_json::from_str(body)
        .map_err(|e| OracleError::OracleUnavailable {
            attempts: 1,
            reason: format!("response is not JSON: {e}"),
        })?;
    v.get("choices")
        .and_then(|c| c.get(0))
        .and_then(|c| c.get("message"))
        .and_then(|m| m.get("content"))
        .and_then(Value::as_str)
        .map(str::to_owned)
        .ok_or_else(|| OracleError::OracleUnavailable {
            attempts: 1,
            reason: "response lacks choices[0].message.content".into(),
        })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LlmReply {
    pub text: String,
    pub latency_ms: u64,
}

/// Blocking chat-completion client with greedy decoding and retries.
#[derive(Debug)]
pub struct LlmClient {
    config: LlmConfig,
    agent: ureq::Agent,
}

enum Attempt {
    Retry(String),
    Fatal(OracleError),
}

impl LlmClient {
    pub fn new(config: LlmConfig) -> Result<Self> {
        config.validate()?;
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .build()
            .new_agent();
        Ok(LlmClient { config, agent })
    }

    pub fn config(&self) -> &LlmConfig {
        &self.config
    }

    fn attempt(&self, body: &Value) -> std::result::Result<String, Attempt> {
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(token) = &self.config.token {
            req = req.header("Authorization", format!("Bearer {token}"));
        }
        let mut resp = req
            .send_json(body)
            .map_err(|e| Attempt::Retry(format!("transport: {e}")))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Attempt::Retry(format!("reading body: {e}")))?;
        match status {
            200..=299 => parse_chat_response(&text).map_err(Attempt::Fatal),
            429 | 500..=599 => Err(Attempt::Retry(format!("HTTP {status}: {text}"))),
            _ => Err(Attempt::Fatal(OracleError::HttpStatus { status, body: text })),
        }
    }

    /// Sends `prompt` as a single user message at temperature 0.
    pub fn query(&self, prompt: &str) -> Result<LlmReply> {
        let body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        });
        let delays = self.config.retry.delays();
        let mut last = String::new();
        for attempt in 0..self.config.retry.attempts {
            let started = Instant::now();
            match self.attempt(&body) {
                Ok(text) => {
                    return Ok(LlmReply {
                        text,
                        latency_ms: started.elapsed().as_millis() as u64,
                    })
                }
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(reason)) => {
                    log::warn!("oracle attempt {} failed: {reason}", attempt + 1);
                    last = reason;
                    if let Some(d) = delays.get(attempt as usize) {
                        std::thread::sleep(*d);
                    }
                }
            }
        }
        Err(OracleError::OracleUnavailable {
            attempts: self.config.retry.attempts,
            reason: last,
        })
    }
}

/// Labels snippets by prompting a chat model with a filtering template.
#[derive(Debug)]
pub struct LlmOracle {
    client: LlmClient,
    template: PromptTemplate,
}

impl LlmOracle {
    pub fn new(client: LlmClient, template: PromptTemplate) -> Result<Self> {
        template.validate()?;
        Ok(LlmOracle { client, template })
    }
}

impl Oracle for LlmOracle {
    fn label(&self, snippet: &Snippet) -> Result<OracleResponse> {
        let prompt = render_prompt(&self.template, &snippet.text)?;
        let reply = self.client.query(&prompt)?;
        let cost = self.client.config.micro_usd_per_query;
        let label = parse_verdict(&reply.text, &self.template).map_err(|e| match e {
            OracleError::UnparseableVerdict { raw, .. } => OracleError::UnparseableVerdict {
                raw,
                cost_micro_usd: cost,
            },
            other => other,
        })?;
        Ok(OracleResponse {
            snippet_id: snippet.id,
            label,
            raw_text: Some(reply.text),
            latency_ms: reply.latency_ms,
            cost_micro_usd: cost,
        })
    }
}
