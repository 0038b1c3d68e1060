//! Blocking client for OpenAI-compatible `/v1/chat/completions` servers.

use std::collections::BTreeMap;
use std::time::Duration;

use serde_json::{json, Value};

use super::reasoning::{THINK_CLOSE, THINK_OPEN};
use super::{Backend, BackendError, ChatRequest, Completion};

/// `{base}/v1/chat/completions`, tolerating a base that already ends in `/v1`.
pub fn chat_completions_url(base_url: &str) -> String {
    let base = base_url.trim_end_matches('/');
    let base = base.strip_suffix("/v1").unwrap_or(base);
    format!("{base}/v1/chat/completions")
}

pub struct OpenAiBackend {
    url: String,
    model: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl OpenAiBackend {
    pub fn new(base_url: &str, model: &str, api_key: Option<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        OpenAiBackend {
            url: chat_completions_url(base_url),
            model: model.to_string(),
            api_key,
            agent,
        }
    }

    fn body(&self, request: &ChatRequest) -> Value {
        let mut messages = Vec::new();
        if let Some(system) = &request.system {
            messages.push(json!({"role": "system", "content": system}));
        }
        messages.push(json!({"role": "user", "content": request.user}));
        let mut body = json!({
            "model": self.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        if request.want_logprobs {
            body["logprobs"] = json!(true);
            body["top_logprobs"] = json!(request.logprob_top_k);
        }
        body
    }
}

impl Backend for OpenAiBackend {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, BackendError> {
        let payload = serde_json::to_string(&self.body(request))
            .map_err(|e| BackendError::Unparseable(e.to_string()))?;
        let mut call = self
            .agent
            .post(&self.url)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = call
            .send(payload.as_str())
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let body = response
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            let body: String = body.chars().take(500).collect();
            return Err(BackendError::Status { status, body });
        }
        parse_response(&body)
    }
}

/// Extracts text, a separate reasoning field and first-answer-token
/// log-probabilities from a chat-completions response body.
pub fn parse_response(body: &str) -> Result<Completion, BackendError> {
    let v: Value =
        serde_json::from_str(body).map_err(|e| BackendError::Unparseable(e.to_string()))?;
    let choice = v
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| BackendError::Unparseable("response has no choices".into()))?;
    let message = choice
        .get("message")
        .ok_or_else(|| BackendError::Unparseable("choice has no message".into()))?;
    let text = message
        .get("content")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();
    let reasoning = ["reasoning_content", "reasoning"]
        .iter()
        .find_map(|k| message.get(*k).and_then(Value::as_str))
        .map(str::to_string);
    let first_token_logprobs = choice
        .get("logprobs")
        .and_then(|l| l.get("content"))
        .and_then(Value::as_array)
        .and_then(|tokens| answer_token_logprobs(tokens));
    Ok(Completion {
        text,
        reasoning,
        first_token_logprobs,
    })
}

/// Finds the first non-blank token after any leading think block and returns
/// its top alternatives (always including the sampled token itself).
fn answer_token_logprobs(tokens: &[Value]) -> Option<BTreeMap<String, f64>> {
    let token_text = |t: &Value| {
        t.get("token")
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_string()
    };
    let texts: Vec<String> = tokens.iter().map(token_text).collect();
    let mut start = 0;
    if texts.concat().trim_start().starts_with(THINK_OPEN) {
        let mut acc = String::new();
        start = texts.iter().position(|t| {
            acc.push_str(t);
            acc.contains(THINK_CLOSE)
        })? + 1;
    }
    let token = tokens[start..]
        .iter()
        .find(|t| !token_text(t).trim().is_empty())?;
    let mut out = BTreeMap::new();
    if let Some(alts) = token.get("top_logprobs").and_then(Value::as_array) {
        for alt in alts {
            if let (Some(tok), Some(lp)) = (
                alt.get("token").and_then(Value::as_str),
                alt.get("logprob").and_then(Value::as_f64),
            ) {
                out.entry(tok.to_string()).or_insert(lp);
            }
        }
    }
    if let Some(lp) = token.get("logprob").and_then(Value::as_f64) {
        out.entry(token_text(token)).or_insert(lp);
    }
    (!out.is_empty()).then_some(out)
}
