use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, ChatRequest, Completion, GatewayError, Stage};

/// Canned reply for a script entry.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockResponse {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<BTreeMap<String, f64>>,
}

/// One script line: requests for `stage` (any stage when absent) whose
/// prompt contains `contains` get `response`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<Stage>,
    #[serde(default)]
    pub contains: String,
    #[serde(flatten)]
    pub response: MockResponse,
}

impl ScriptEntry {
    pub fn new(stage: Stage, contains: impl Into<String>, text: impl Into<String>) -> Self {
        ScriptEntry {
            stage: Some(stage),
            contains: contains.into(),
            response: MockResponse {
                text: text.into(),
                ..Default::default()
            },
        }
    }

    pub fn any_stage(contains: impl Into<String>, text: impl Into<String>) -> Self {
        ScriptEntry {
            stage: None,
            contains: contains.into(),
            response: MockResponse {
                text: text.into(),
                ..Default::default()
            },
        }
    }

    pub fn with_reasoning(mut self, reasoning: impl Into<String>) -> Self {
        self.response.reasoning = Some(reasoning.into());
        self
    }

    pub fn with_logprobs(mut self, logprobs: &[(&str, f64)]) -> Self {
        self.response.logprobs = Some(logprobs.iter().map(|(t, v)| (t.to_string(), *v)).collect());
        self
    }

    fn matches(&self, request: &ChatRequest) -> bool {
        if self.stage.is_some_and(|s| s != request.stage) {
            return false;
        }
        request.user.contains(&self.contains)
            || request
                .system
                .as_deref()
                .is_some_and(|s| s.contains(&self.contains))
    }
}

/// Scripted endpoint. The first matching entry answers; a request with no
/// match fails with `ScriptMiss` rather than inventing output.
#[derive(Debug, Clone)]
pub struct MockBackend {
    script: Vec<ScriptEntry>,
}

impl MockBackend {
    pub fn new(script: Vec<ScriptEntry>) -> Result<Self, GatewayError> {
        if script.is_empty() {
            return Err(GatewayError::EmptyScript);
        }
        Ok(MockBackend { script })
    }

    /// Loads a JSONL script, one [`ScriptEntry`] per line.
    pub fn from_file(path: &Path) -> Result<Self, GatewayError> {
        let text = fs::read_to_string(path).map_err(|e| GatewayError::Config {
            endpoint: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut script = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: ScriptEntry =
                serde_json::from_str(line).map_err(|e| GatewayError::Config {
                    endpoint: path.display().to_string(),
                    message: format!("script line {}: {e}", i + 1),
                })?;
            script.push(entry);
        }
        Self::new(script)
    }
}

impl Backend for MockBackend {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, BackendError> {
        let entry = self
            .script
            .iter()
            .find(|e| e.matches(request))
            .ok_or_else(|| BackendError::ScriptMiss(request.summary()))?;
        Ok(Completion {
            text: entry.response.text.clone(),
            reasoning: entry.response.reasoning.clone(),
            first_token_logprobs: if request.want_logprobs {
                entry.response.logprobs.clone()
            } else {
                None
            },
        })
    }
}
