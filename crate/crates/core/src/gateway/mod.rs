//! Every model call goes through [`Gateway`].
//!
//! A gateway maps endpoint ids to backends: an OpenAI-compatible HTTP client
//! or a scripted mock (URL scheme `mock:`). It owns retries with exponential
//! backoff, a per-endpoint cap on in-flight requests, and the conversion of
//! raw completions into [`ChatExchange`] records with the reasoning trace
//! split off.

mod http;
mod mock;
mod reasoning;

pub use http::{chat_completions_url, OpenAiBackend};
pub use mock::{MockBackend, MockResponse, ScriptEntry};
pub use reasoning::{split_reasoning, UnterminatedTrace, THINK_CLOSE, THINK_OPEN};

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Pipeline stage a request belongs to; mock scripts match on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Persona,
    Daily,
    Expert,
    Solve,
    Extract,
    Negatives,
    Passage,
    Judge,
    Rerank,
    Reader,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("unit variant");
        f.write_str(s.as_str().unwrap_or("?"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub endpoint_id: String,
    pub stage: Stage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<String>,
    pub user: String,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default)]
    pub want_logprobs: bool,
    #[serde(default = "default_top_k")]
    pub logprob_top_k: u8,
}

fn default_top_k() -> u8 {
    5
}

impl ChatRequest {
    pub fn new(endpoint_id: impl Into<String>, stage: Stage, user: impl Into<String>) -> Self {
        ChatRequest {
            endpoint_id: endpoint_id.into(),
            stage,
            system: None,
            user: user.into(),
            temperature: 0.0,
            max_tokens: 1024,
            want_logprobs: false,
            logprob_top_k: default_top_k(),
        }
    }

    pub fn temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn max_tokens(mut self, n: u32) -> Self {
        self.max_tokens = n;
        self
    }

    pub fn logprobs(mut self, top_k: u8) -> Self {
        self.want_logprobs = true;
        self.logprob_top_k = top_k;
        self
    }

    fn check(&self) -> Result<(), GatewayError> {
        let bad = |why: &str| Err(GatewayError::InvalidRequest(why.to_string()));
        if self.user.trim().is_empty() {
            return bad("user message is empty");
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return bad("temperature must be finite and non-negative");
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be positive");
        }
        if self.want_logprobs && self.logprob_top_k == 0 {
            return bad("logprob_top_k must be positive");
        }
        Ok(())
    }

    fn summary(&self) -> String {
        let head: String = self.user.chars().take(120).collect();
        format!(
            "[{}@{}] {}",
            self.stage,
            self.endpoint_id,
            head.replace('\n', " ")
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub request: ChatRequest,
    pub raw_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning_trace: Option<String>,
    pub final_text: String,
    /// Log-probabilities of the candidates for the first answer token after
    /// any reasoning trace.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_token_logprobs: Option<BTreeMap<String, f64>>,
    pub attempt_count: u32,
}

/// What a backend hands back before trace splitting.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Completion {
    pub text: String,
    /// Reasoning delivered in a separate response field.
    pub reasoning: Option<String>,
    pub first_token_logprobs: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("transport: {0}")]
    Transport(String),
    #[error("unparseable response: {0}")]
    Unparseable(String),
    #[error("no script entry matches {0}")]
    ScriptMiss(String),
}

impl BackendError {
    fn is_transient(&self) -> bool {
        match self {
            BackendError::Status { status, .. } => *status == 429 || *status >= 500,
            BackendError::Transport(_) => true,
            BackendError::Unparseable(_) | BackendError::ScriptMiss(_) => false,
        }
    }
}

pub trait Backend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, BackendError>;
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("unknown endpoint `{0}`")]
    EndpointUnknown(String),
    #[error("endpoint `{endpoint}` failed after {attempts} attempts (last status {last_status:?}): {message}")]
    ExhaustedRetries {
        endpoint: String,
        attempts: u32,
        last_status: Option<u16>,
        message: String,
    },
    #[error("endpoint `{endpoint}` rejected the request: HTTP {status}: {message}")]
    Rejected {
        endpoint: String,
        status: u16,
        message: String,
    },
    #[error("unparseable response: {0}")]
    ResponseUnparseable(String),
    #[error("mock script has no entry for {0}")]
    ScriptMiss(String),
    #[error("mock script is empty")]
    EmptyScript,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("endpoint `{endpoint}`: {message}")]
    Config { endpoint: String, message: String },
}

/// Exponential backoff with a ceiling; the delay never shrinks between
/// consecutive attempts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 4,
            base_delay_ms: 500,
            max_delay_ms: 8_000,
        }
    }
}

impl RetryPolicy {
    /// Delay before attempt `attempt` (1-based; the first attempt has none).
    pub fn delay_before(&self, attempt: u32) -> Duration {
        if attempt <= 1 {
            return Duration::ZERO;
        }
        let factor = 1u64.checked_shl(attempt - 2).unwrap_or(u64::MAX);
        let ms = self
            .base_delay_ms
            .saturating_mul(factor)
            .min(self.max_delay_ms);
        Duration::from_millis(ms)
    }
}

/// Caps concurrent in-flight requests for one endpoint.
#[derive(Debug)]
pub struct InFlightLimiter {
    max: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a> {
    limiter: &'a InFlightLimiter,
}

impl InFlightLimiter {
    pub fn new(max: usize) -> Self {
        InFlightLimiter {
            max: max.max(1),
            active: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut active = self.active.lock().unwrap_or_else(|e| e.into_inner());
        while *active >= self.max {
            active = self.freed.wait(active).unwrap_or_else(|e| e.into_inner());
        }
        *active += 1;
        Permit { limiter: self }
    }

    pub fn in_flight(&self) -> usize {
        *self.active.lock().unwrap_or_else(|e| e.into_inner())
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut active = self
            .limiter
            .active
            .lock()
            .unwrap_or_else(|e| e.into_inner());
        *active -= 1;
        self.limiter.freed.notify_one();
    }
}

pub const MOCK_SCHEME: &str = "mock:";

fn default_in_flight() -> usize {
    4
}

fn default_timeout() -> u64 {
    300
}

/// Declarative description of one endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointSpec {
    /// Base URL of an OpenAI-compatible server, or `mock:` for a scripted mock.
    pub url: String,
    #[serde(default)]
    pub model: String,
    /// Environment variable holding the bearer token.
    #[serde(default)]
    pub api_key_env: Option<String>,
    /// JSONL script for `mock:` endpoints.
    #[serde(default)]
    pub mock_script: Option<PathBuf>,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

impl EndpointSpec {
    pub fn mock(script: impl Into<PathBuf>) -> Self {
        EndpointSpec {
            url: MOCK_SCHEME.into(),
            model: "mock".into(),
            api_key_env: None,
            mock_script: Some(script.into()),
            max_in_flight: default_in_flight(),
            retry: RetryPolicy::default(),
            timeout_secs: default_timeout(),
        }
    }

    pub fn is_mock(&self) -> bool {
        self.url.starts_with(MOCK_SCHEME)
    }
}

struct Endpoint {
    model: String,
    backend: Arc<dyn Backend>,
    limiter: InFlightLimiter,
    retry: RetryPolicy,
}

#[derive(Default)]
pub struct Gateway {
    endpoints: HashMap<String, Endpoint>,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut ids: Vec<_> = self.endpoints.keys().collect();
        ids.sort();
        f.debug_struct("Gateway").field("endpoints", &ids).finish()
    }
}

impl Gateway {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds every endpoint in `specs`. Relative mock script paths resolve
    /// against `base_dir`.
    pub fn from_specs(
        specs: &BTreeMap<String, EndpointSpec>,
        base_dir: &Path,
    ) -> Result<Self, GatewayError> {
        let mut gw = Gateway::new();
        for (id, spec) in specs {
            let config_err = |message: String| GatewayError::Config {
                endpoint: id.clone(),
                message,
            };
            let backend: Arc<dyn Backend> = if spec.is_mock() {
                let path = spec
                    .mock_script
                    .as_ref()
                    .ok_or_else(|| config_err("mock endpoint needs `mock_script`".into()))?;
                let path = base_dir.join(path);
                Arc::new(MockBackend::from_file(&path).map_err(|e| config_err(e.to_string()))?)
            } else {
                let api_key = match &spec.api_key_env {
                    Some(var) => Some(std::env::var(var).map_err(|_| {
                        config_err(format!("credential variable `{var}` is not set"))
                    })?),
                    None => None,
                };
                Arc::new(OpenAiBackend::new(
                    &spec.url,
                    &spec.model,
                    api_key,
                    Duration::from_secs(spec.timeout_secs),
                ))
            };
            gw.insert(id, &spec.model, backend, spec.max_in_flight, spec.retry);
        }
        Ok(gw)
    }

    /// Registers any backend under `id`.
    pub fn insert(
        &mut self,
        id: impl Into<String>,
        model: impl Into<String>,
        backend: Arc<dyn Backend>,
        max_in_flight: usize,
        retry: RetryPolicy,
    ) {
        self.endpoints.insert(
            id.into(),
            Endpoint {
                model: model.into(),
                backend,
                limiter: InFlightLimiter::new(max_in_flight),
                retry,
            },
        );
    }

    /// Registers a scripted mock endpoint.
    pub fn register_mock(
        &mut self,
        id: impl Into<String>,
        script: Vec<ScriptEntry>,
    ) -> Result<(), GatewayError> {
        let backend = MockBackend::new(script)?;
        self.insert(
            id,
            "mock",
            Arc::new(backend),
            default_in_flight(),
            RetryPolicy::default(),
        );
        Ok(())
    }

    pub fn has_endpoint(&self, id: &str) -> bool {
        self.endpoints.contains_key(id)
    }

    pub fn model_name(&self, id: &str) -> Option<&str> {
        self.endpoints.get(id).map(|e| e.model.as_str())
    }

    pub fn chat(&self, request: ChatRequest) -> Result<ChatExchange, GatewayError> {
        request.check()?;
        let endpoint = self
            .endpoints
            .get(&request.endpoint_id)
            .ok_or_else(|| GatewayError::EndpointUnknown(request.endpoint_id.clone()))?;
        let max_attempts = endpoint.retry.max_attempts.max(1);

        let mut attempt = 0;
        let completion = loop {
            attempt += 1;
            let delay = endpoint.retry.delay_before(attempt);
            if !delay.is_zero() {
                thread::sleep(delay);
            }
            let result = {
                let _permit = endpoint.limiter.acquire();
                endpoint.backend.complete(&request)
            };
            match result {
                Ok(c) => break c,
                Err(e) if e.is_transient() && attempt < max_attempts => {
                    log::warn!("{}: attempt {attempt} failed: {e}", request.endpoint_id);
                }
                Err(e) if e.is_transient() => {
                    let last_status = match &e {
                        BackendError::Status { status, .. } => Some(*status),
                        _ => None,
                    };
                    return Err(GatewayError::ExhaustedRetries {
                        endpoint: request.endpoint_id.clone(),
                        attempts: attempt,
                        last_status,
                        message: e.to_string(),
                    });
                }
                Err(BackendError::ScriptMiss(_)) => {
                    return Err(GatewayError::ScriptMiss(request.summary()))
                }
                Err(BackendError::Unparseable(m)) => {
                    return Err(GatewayError::ResponseUnparseable(m))
                }
                Err(BackendError::Status { status, body }) => {
                    return Err(GatewayError::Rejected {
                        endpoint: request.endpoint_id.clone(),
                        status,
                        message: body,
                    })
                }
                Err(BackendError::Transport(m)) => {
                    unreachable!("transport errors are transient: {m}")
                }
            }
        };
        build_exchange(request, completion, attempt)
    }
}

fn build_exchange(
    request: ChatRequest,
    completion: Completion,
    attempt_count: u32,
) -> Result<ChatExchange, GatewayError> {
    let (inline_trace, final_text) = split_reasoning(&completion.text)
        .map_err(|e| GatewayError::ResponseUnparseable(e.to_string()))?;
    let separate = completion
        .reasoning
        .filter(|r| !r.trim().is_empty())
        .map(|r| r.trim().to_string());
    let reasoning_trace = separate.or(inline_trace);
    if let Some(lp) = &completion.first_token_logprobs {
        if let Some((tok, v)) = lp.iter().find(|(_, v)| !v.is_finite() || **v > 1e-9) {
            return Err(GatewayError::ResponseUnparseable(format!(
                "log-probability {v} for token {tok:?} is not <= 0"
            )));
        }
    }
    let first_token_logprobs = completion
        .first_token_logprobs
        .map(|m| m.into_iter().map(|(k, v)| (k, v.min(0.0))).collect());
    Ok(ChatExchange {
        request,
        raw_text: completion.text,
        reasoning_trace,
        final_text,
        first_token_logprobs,
        attempt_count,
    })
}

/// Serializes exchanges one JSON object per line.
pub fn transcript_bytes(exchanges: &[ChatExchange]) -> Vec<u8> {
    let mut out = Vec::new();
    for ex in exchanges {
        serde_json::to_writer(&mut out, ex).expect("exchange serializes");
        out.push(b'\n');
    }
    out
}

/// Hex SHA-256 of [`transcript_bytes`].
pub fn transcript_hash(exchanges: &[ChatExchange]) -> String {
    hex::encode(Sha256::digest(transcript_bytes(exchanges)))
}

pub fn write_transcript(exchanges: &[ChatExchange], path: &Path) -> std::io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&transcript_bytes(exchanges))?;
    f.flush()
}
