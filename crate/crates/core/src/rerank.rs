//! Pointwise LLM reranking of first-stage candidates.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Document, Query, RankedDoc, Ranking};
use crate::gateway::{ChatExchange, ChatRequest, Gateway, GatewayError, Stage};
use crate::judge::{judge_prompt, parse_verdict, VerdictError};
use crate::prompt::{PromptSet, TemplateError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMethod {
    Logprob,
    TextBinary,
}

impl fmt::Display for ScoreMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreMethod::Logprob => "logprob",
            ScoreMethod::TextBinary => "text_binary",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceScore {
    pub value: f64,
    pub method: ScoreMethod,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<String>,
}

/// Probability of `true` when only the two answer tokens are allowed.
pub fn two_way_softmax(logit_true: f64, logit_false: f64) -> f64 {
    1.0 / (1.0 + (logit_false - logit_true).exp())
}

fn token_logprob(logprobs: &BTreeMap<String, f64>, word: &str) -> Option<f64> {
    logprobs
        .iter()
        .filter(|(tok, _)| tok.trim().eq_ignore_ascii_case(word))
        .map(|(_, &lp)| lp)
        .reduce(f64::max)
}

/// Scores one exchange. Log-probabilities are used when both answer tokens
/// are among the first-token candidates; otherwise the final text decides.
pub fn score_exchange(
    ex: &ChatExchange,
    use_logprobs: bool,
) -> Result<RelevanceScore, VerdictError> {
    let trace = ex.reasoning_trace.clone();
    if use_logprobs {
        if let Some(lp) = &ex.first_token_logprobs {
            if let (Some(t), Some(f)) = (token_logprob(lp, "true"), token_logprob(lp, "false")) {
                return Ok(RelevanceScore {
                    value: two_way_softmax(t, f),
                    method: ScoreMethod::Logprob,
                    trace,
                });
            }
        }
    }
    let label = parse_verdict(&ex.final_text)?;
    Ok(RelevanceScore {
        value: if label { 1.0 } else { 0.0 },
        method: ScoreMethod::TextBinary,
        trace,
    })
}

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("no verdict in reply {0:?}")]
    NoVerdict(String),
    #[error("document text not found")]
    MissingDoc,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// Document texts by id.
#[derive(Debug, Clone, Default)]
pub struct DocStore {
    texts: HashMap<String, String>,
}

impl DocStore {
    pub fn new(docs: &[Document]) -> Self {
        DocStore {
            texts: docs
                .iter()
                .map(|d| (d.id.clone(), d.text.clone()))
                .collect(),
        }
    }

    pub fn get(&self, id: &str) -> Option<&str> {
        self.texts.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.texts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.texts.is_empty()
    }
}

/// Audit record for one scored (or failed) candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTrace {
    pub query_id: String,
    pub doc_id: String,
    /// 1-based rank in the candidate list.
    pub input_rank: usize,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<ScoreMethod>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RerankOutput {
    pub ranking: Ranking,
    pub traces: Vec<ScoreTrace>,
    /// Candidates inside the scoring window that could not be scored.
    pub failures: usize,
    /// Candidates past the scoring window, appended with score 0.
    pub unscored: usize,
}

pub trait Rerank: Sync {
    fn rerank(&self, query: &Query, candidates: &Ranking, docs: &DocStore) -> RerankOutput;
}

/// Leaves the candidate order alone.
#[derive(Debug, Clone, Copy, Default)]
pub struct PassThrough;

impl Rerank for PassThrough {
    fn rerank(&self, _query: &Query, candidates: &Ranking, _docs: &DocStore) -> RerankOutput {
        RerankOutput {
            ranking: candidates.clone(),
            traces: Vec::new(),
            failures: 0,
            unscored: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RerankSettings {
    pub endpoint: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_rerank_tokens")]
    pub max_tokens: u32,
    /// Ask for first-token log-probabilities and prefer them when present.
    #[serde(default = "default_true")]
    pub use_logprobs: bool,
    #[serde(default = "default_top_k")]
    pub logprob_top_k: u8,
    /// How many leading candidates are scored.
    #[serde(default = "default_k_in")]
    pub k_in: usize,
}

fn default_rerank_tokens() -> u32 {
    8192
}

fn default_true() -> bool {
    true
}

fn default_top_k() -> u8 {
    5
}

fn default_k_in() -> usize {
    100
}

impl RerankSettings {
    pub fn on(endpoint: impl Into<String>) -> Self {
        RerankSettings {
            endpoint: endpoint.into(),
            temperature: 0.0,
            max_tokens: default_rerank_tokens(),
            use_logprobs: true,
            logprob_top_k: default_top_k(),
            k_in: default_k_in(),
        }
    }
}

pub struct LlmReranker<'a> {
    gateway: &'a Gateway,
    settings: RerankSettings,
    prompts: PromptSet,
}

impl<'a> LlmReranker<'a> {
    pub fn new(gateway: &'a Gateway, settings: RerankSettings) -> Self {
        LlmReranker {
            gateway,
            settings,
            prompts: PromptSet::default(),
        }
    }

    pub fn with_prompts(mut self, prompts: PromptSet) -> Self {
        self.prompts = prompts;
        self
    }

    pub fn settings(&self) -> &RerankSettings {
        &self.settings
    }

    /// Run tag: model name plus the preferred scoring method.
    pub fn tag(&self) -> String {
        let model = self
            .gateway
            .model_name(&self.settings.endpoint)
            .unwrap_or(&self.settings.endpoint);
        let method = if self.settings.use_logprobs {
            ScoreMethod::Logprob
        } else {
            ScoreMethod::TextBinary
        };
        format!("{model}-{method}")
    }

    pub fn relevance_score(
        &self,
        query: &Query,
        passage_text: &str,
    ) -> Result<(RelevanceScore, ChatExchange), ScoreError> {
        let user = judge_prompt(&self.prompts, query, passage_text)?;
        let mut request = ChatRequest::new(self.settings.endpoint.clone(), Stage::Rerank, user)
            .temperature(self.settings.temperature)
            .max_tokens(self.settings.max_tokens);
        if self.settings.use_logprobs {
            request = request.logprobs(self.settings.logprob_top_k);
        }
        let ex = self.gateway.chat(request)?;
        match score_exchange(&ex, self.settings.use_logprobs) {
            Ok(score) => Ok((score, ex)),
            Err(_) => Err(ScoreError::NoVerdict(ex.final_text)),
        }
    }
}

impl Rerank for LlmReranker<'_> {
    fn rerank(&self, query: &Query, candidates: &Ranking, docs: &DocStore) -> RerankOutput {
        let k_in = self.settings.k_in.min(candidates.len());
        let head = &candidates.entries()[..k_in];
        let traces: Vec<ScoreTrace> = head
            .par_iter()
            .enumerate()
            .map(|(i, cand)| {
                let mut t = ScoreTrace {
                    query_id: query.id.clone(),
                    doc_id: cand.doc_id.clone(),
                    input_rank: i + 1,
                    value: 0.0,
                    method: None,
                    trace: None,
                    raw_text: None,
                    error: None,
                };
                let result = match docs.get(&cand.doc_id) {
                    Some(text) => self.relevance_score(query, text),
                    None => Err(ScoreError::MissingDoc),
                };
                match result {
                    Ok((score, ex)) => {
                        t.value = score.value;
                        t.method = Some(score.method);
                        t.trace = score.trace;
                        t.raw_text = Some(ex.raw_text);
                    }
                    Err(e) => {
                        warn!(
                            "query {} doc {}: scoring failed: {e}",
                            query.id, cand.doc_id
                        );
                        t.error = Some(e.to_string());
                    }
                }
                t
            })
            .collect();
        let failures = traces.iter().filter(|t| t.error.is_some()).count();
        let mut order: Vec<&ScoreTrace> = traces.iter().collect();
        // stable sort keeps retrieval order among equal scores
        order.sort_by(|a, b| b.value.total_cmp(&a.value));
        let mut entries: Vec<RankedDoc> = order
            .into_iter()
            .map(|t| RankedDoc::new(t.doc_id.clone(), t.value))
            .collect();
        let tail = &candidates.entries()[k_in..];
        entries.extend(tail.iter().map(|c| RankedDoc::new(c.doc_id.clone(), 0.0)));
        let ranking = Ranking::from_ordered(query.id.clone(), entries, self.tag())
            .expect("candidate ids are unique and scores lie in [0, 1]");
        RerankOutput {
            ranking,
            traces,
            failures,
            unscored: tail.len(),
        }
    }
}
