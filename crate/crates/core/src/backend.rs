//! Execution backends: the remote chat-completion client and the
//! per-(module, tier) binding table that decides which engine runs
//! each pipeline cell.

use crate::error::{Error, Result};
use crate::types::{ModuleId, Strategy, Tier};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::time::Duration;

/// Default per-call output cap.
pub const DEFAULT_MAX_TOKENS: u32 = 512;

/// Output cap for short-answer generation.
pub const SHORT_ANSWER_MAX_TOKENS: u32 = 32;

/// Decoding controls sent with every remote call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for GenerationParams {
    fn default() -> GenerationParams {
        GenerationParams { temperature: 0.0, max_tokens: DEFAULT_MAX_TOKENS }
    }
}

/// A completed remote call with its reported (or estimated) usage.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

/// Anything that can answer a chat prompt for a named model.
pub trait ChatClient: Send + Sync {
    fn complete(
        &self,
        model_id: &str,
        prompt: &str,
        params: &GenerationParams,
    ) -> Result<Completion>;
}

/// Fallback token estimate when a server omits usage: one token per
/// four characters, rounded up.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

enum AttemptError {
    Transient(String),
    Fatal(String),
}

/// An HTTP chat-completion client. Transient failures (transport
/// errors, 429, 5xx) are retried up to two times with exponential
/// backoff; other statuses fail immediately.
pub struct HttpChatClient {
    agent: ureq::Agent,
    endpoint: String,
    api_key: Option<String>,
    backoff: Duration,
}

impl HttpChatClient {
    pub fn new(endpoint: &str, api_key: Option<String>) -> HttpChatClient {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .http_status_as_error(true)
            .build();
        HttpChatClient {
            agent: config.into(),
            endpoint: endpoint.to_string(),
            api_key,
            backoff: Duration::from_millis(200),
        }
    }

    /// Overrides the first-retry delay (doubles on the second retry).
    pub fn with_backoff(mut self, backoff: Duration) -> HttpChatClient {
        self.backoff = backoff;
        self
    }

    fn attempt(
        &self,
        model_id: &str,
        prompt: &str,
        params: &GenerationParams,
    ) -> std::result::Result<Completion, AttemptError> {
        let body = serde_json::json!({
            "model": model_id,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        });
        let mut request = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            request = request.header("authorization", &format!("Bearer {key}"));
        }
        let mut response = request.send_json(&body).map_err(classify_send_error)?;
        let value: serde_json::Value = response
            .body_mut()
            .read_json()
            .map_err(|e| AttemptError::Transient(format!("bad response body: {e}")))?;
        let text = value["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| {
                AttemptError::Transient("response missing choices[0].message.content".into())
            })?
            .to_string();
        let input_tokens = value["usage"]["prompt_tokens"]
            .as_u64()
            .unwrap_or_else(|| estimate_tokens(prompt));
        let output_tokens = value["usage"]["completion_tokens"]
            .as_u64()
            .unwrap_or_else(|| estimate_tokens(&text));
        Ok(Completion { text, input_tokens, output_tokens })
    }
}

fn classify_send_error(err: ureq::Error) -> AttemptError {
    match err {
        ureq::Error::StatusCode(code) if code == 429 || code >= 500 => {
            AttemptError::Transient(format!("status {code}"))
        }
        ureq::Error::StatusCode(code) => AttemptError::Fatal(format!("status {code}")),
        other => AttemptError::Transient(format!("transport: {other}")),
    }
}

impl ChatClient for HttpChatClient {
    fn complete(
        &self,
        model_id: &str,
        prompt: &str,
        params: &GenerationParams,
    ) -> Result<Completion> {
        let mut delay = self.backoff;
        let mut last = String::new();
        for attempt in 0..3 {
            match self.attempt(model_id, prompt, params) {
                Ok(completion) => return Ok(completion),
                Err(AttemptError::Fatal(msg)) => {
                    return Err(Error::Http(format!("{model_id}: {msg}")));
                }
                Err(AttemptError::Transient(msg)) => {
                    last = msg;
                    if attempt < 2 {
                        std::thread::sleep(delay);
                        delay *= 2;
                    }
                }
            }
        }
        Err(Error::Http(format!("{model_id}: retries exhausted: {last}")))
    }
}

/// The engine bound to one (module, tier) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BackendKind {
    /// Lexical low-tier stand-in. Free.
    Heuristic,
    /// Embedding-based mid-tier stand-in. Free.
    Embedding,
    /// A remote LLM call priced from the table.
    Remote { model_id: String },
}

/// The full 5x3 binding table plus the strategy that shapes prompt
/// selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendSpec {
    pub strategy: Strategy,
    cells: Vec<Vec<BackendKind>>,
}

impl BackendSpec {
    fn from_tiers(strategy: Strategy, per_tier: [BackendKind; 3]) -> BackendSpec {
        let cells = (0..5)
            .map(|_| per_tier.to_vec())
            .collect();
        BackendSpec { strategy, cells }
    }

    /// Implementation strategy: symbolic rules at LOW, embedding
    /// stand-ins at MID, a remote model at HIGH. Without a model the
    /// HIGH cells reuse the embedding stand-in so offline runs stay
    /// fully bound (all cells are then free).
    pub fn implementation(high_model: Option<&str>) -> BackendSpec {
        let high = match high_model {
            Some(m) => BackendKind::Remote { model_id: m.to_string() },
            None => BackendKind::Embedding,
        };
        Self::from_tiers(
            Strategy::Implementation,
            [BackendKind::Heuristic, BackendKind::Embedding, high],
        )
    }

    /// Reasoning strategy: one model at every tier, with tier-specific
    /// prompt scaffolds carrying the compute difference.
    pub fn reasoning(model: &str) -> BackendSpec {
        let remote = BackendKind::Remote { model_id: model.to_string() };
        Self::from_tiers(
            Strategy::Reasoning,
            [remote.clone(), remote.clone(), remote],
        )
    }

    /// Capacity strategy: the same prompt per module across tiers,
    /// with tier-ranked backbone models carrying the difference.
    pub fn capacity(low_model: &str, mid_model: &str, high_model: &str) -> BackendSpec {
        Self::from_tiers(
            Strategy::Capacity,
            [
                BackendKind::Remote { model_id: low_model.to_string() },
                BackendKind::Remote { model_id: mid_model.to_string() },
                BackendKind::Remote { model_id: high_model.to_string() },
            ],
        )
    }

    /// Simulated strategy: tier effects come from the synthetic
    /// environment's tables; the binding table exists only so every
    /// cell is bound, and executing a cell is a configuration error.
    pub fn simulated() -> BackendSpec {
        Self::from_tiers(
            Strategy::Simulated,
            [BackendKind::Heuristic, BackendKind::Heuristic, BackendKind::Heuristic],
        )
    }

    pub fn kind(&self, module: ModuleId, tier: Tier) -> &BackendKind {
        &self.cells[module.index()][tier.index()]
    }

    /// Rebinds one cell, for mixed configurations.
    pub fn bind(&mut self, module: ModuleId, tier: Tier, kind: BackendKind) {
        self.cells[module.index()][tier.index()] = kind;
    }

    /// Every distinct remote model id in the table, for price-table
    /// validation.
    pub fn remote_models(&self) -> BTreeSet<String> {
        self.cells
            .iter()
            .flatten()
            .filter_map(|k| match k {
                BackendKind::Remote { model_id } => Some(model_id.clone()),
                _ => None,
            })
            .collect()
    }

    /// Whether any cell needs a live client.
    pub fn needs_client(&self) -> bool {
        !self.remote_models().is_empty()
    }
}
