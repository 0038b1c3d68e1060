//! Retrieval-augmented multiple-choice QA: retrieve, rerank, read.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use log::warn;
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bm25::InvertedIndex;
use crate::corpus::{JsonlRecord, Query};
use crate::gateway::{ChatExchange, ChatRequest, Gateway, Stage};
use crate::metrics::MetricReport;
use crate::prompt::{self, PromptSet, TemplateId};
use crate::rerank::{DocStore, Rerank};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McOption {
    pub letter: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McQuestion {
    pub id: String,
    pub stem: String,
    pub options: Vec<McOption>,
    pub gold: String,
}

impl McQuestion {
    pub fn letters(&self) -> impl Iterator<Item = &str> {
        self.options.iter().map(|o| o.letter.as_str())
    }
}

impl JsonlRecord for McQuestion {
    const REQUIRED: &'static [&'static str] = &["id", "stem", "options", "gold"];

    fn validate(&self) -> Result<(), String> {
        if !(2..=8).contains(&self.options.len()) {
            return Err(format!(
                "question `{}` has {} options, expected 2-8",
                self.id,
                self.options.len()
            ));
        }
        let mut seen = HashSet::new();
        for o in &self.options {
            let ok = o.letter.len() == 1 && o.letter.chars().all(|c| c.is_ascii_uppercase());
            if !ok || !seen.insert(o.letter.as_str()) {
                return Err(format!(
                    "question `{}`: bad or repeated option letter `{}`",
                    self.id, o.letter
                ));
            }
        }
        if !seen.contains(self.gold.as_str()) {
            return Err(format!(
                "question `{}`: gold `{}` is not an option",
                self.id, self.gold
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("no option letter could be read from the reply")]
pub struct NoChoice;

fn answer_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i:answer)\s*(?:(?i:is)|:)\s*\(?([A-Z])\b\)?").unwrap())
}

fn letter_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b([A-Z])\b").unwrap())
}

/// Reads the chosen option letter from a reader reply. In order of
/// precedence: an explicit "answer is X" / "Answer: X", the last standalone
/// option letter, then the one option whose text the reply quotes.
pub fn extract_choice(text: &str, options: &[McOption]) -> Result<String, NoChoice> {
    let is_option = |l: &str| options.iter().any(|o| o.letter == l);
    let explicit = answer_re()
        .captures_iter(text)
        .filter_map(|c| c.get(1))
        .map(|m| m.as_str())
        .filter(|l| is_option(l))
        .last();
    if let Some(l) = explicit {
        return Ok(l.to_string());
    }
    let standalone = letter_re()
        .captures_iter(text)
        .filter_map(|c| c.get(1))
        .map(|m| m.as_str())
        .filter(|l| is_option(l))
        .last();
    if let Some(l) = standalone {
        return Ok(l.to_string());
    }
    let lower = text.to_lowercase();
    let quoted: Vec<&McOption> = options
        .iter()
        .filter(|o| !o.text.trim().is_empty() && lower.contains(&o.text.trim().to_lowercase()))
        .collect();
    match quoted.as_slice() {
        [one] => Ok(one.letter.clone()),
        _ => Err(NoChoice),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReaderSettings {
    pub endpoint: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_reader_tokens")]
    pub max_tokens: u32,
}

fn default_reader_tokens() -> u32 {
    4096
}

impl ReaderSettings {
    pub fn on(endpoint: impl Into<String>) -> Self {
        ReaderSettings {
            endpoint: endpoint.into(),
            temperature: 0.0,
            max_tokens: default_reader_tokens(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RagPreset {
    /// Rerank the full top-100.
    Main,
    /// Rerank only the top-20.
    Appendix,
}

impl RagPreset {
    /// (retrieve_k, rerank_k, context_k)
    pub fn depths(self) -> (usize, usize, usize) {
        match self {
            RagPreset::Main => (100, 100, 3),
            RagPreset::Appendix => (100, 20, 3),
        }
    }
}

impl FromStr for RagPreset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "main" => Ok(RagPreset::Main),
            "appendix" => Ok(RagPreset::Appendix),
            _ => Err(format!("unknown RAG preset `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RagConfig {
    pub retrieve_k: usize,
    pub rerank_k: usize,
    pub context_k: usize,
    pub reader: ReaderSettings,
}

impl RagConfig {
    pub fn preset(preset: RagPreset, reader: ReaderSettings) -> Self {
        let (retrieve_k, rerank_k, context_k) = preset.depths();
        RagConfig {
            retrieve_k,
            rerank_k,
            context_k,
            reader,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(1 <= self.context_k
            && self.context_k <= self.rerank_k
            && self.rerank_k <= self.retrieve_k)
        {
            return Err(format!(
                "need 1 <= context_k ({}) <= rerank_k ({}) <= retrieve_k ({})",
                self.context_k, self.rerank_k, self.retrieve_k
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum RagError {
    #[error("no questions to evaluate")]
    EmptyDataset,
    #[error("invalid RAG config: {0}")]
    Config(String),
}

/// Outcome for one question, kept for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RagAnswer {
    pub question_id: String,
    /// `None` when the reader failed or gave no readable letter.
    pub letter: Option<String>,
    pub gold: String,
    pub correct: bool,
    pub context_ids: Vec<String>,
    pub reader_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn format_contexts(texts: &[&str]) -> String {
    texts
        .iter()
        .enumerate()
        .map(|(i, t)| format!("Passage {}:\n{}", i + 1, t.trim()))
        .collect::<Vec<_>>()
        .join("\n\n")
}

pub fn format_options(options: &[McOption]) -> String {
    options
        .iter()
        .map(|o| format!("{}. {}", o.letter, o.text))
        .collect::<Vec<_>>()
        .join("\n")
}

pub struct RagHarness<'a> {
    pub gateway: &'a Gateway,
    pub index: &'a InvertedIndex,
    pub docs: &'a DocStore,
    pub reranker: &'a dyn Rerank,
    pub config: RagConfig,
    pub prompts: PromptSet,
}

impl RagHarness<'_> {
    /// Retrieve, rerank the leading `rerank_k`, and read with the top
    /// `context_k` passages in rerank order.
    pub fn answer(&self, q: &McQuestion) -> (RagAnswer, Option<ChatExchange>) {
        let query = Query::seed(q.id.clone(), q.stem.clone());
        let candidates = self.index.retrieve(&query, self.config.retrieve_k);
        let reranked = self.reranker.rerank(
            &query,
            &candidates.truncated(self.config.rerank_k),
            self.docs,
        );
        let context_ids: Vec<String> = reranked
            .ranking
            .doc_ids()
            .take(self.config.context_k)
            .map(String::from)
            .collect();
        let texts: Vec<&str> = context_ids
            .iter()
            .filter_map(|id| self.docs.get(id))
            .collect();
        let mut answer = RagAnswer {
            question_id: q.id.clone(),
            letter: None,
            gold: q.gold.clone(),
            correct: false,
            context_ids,
            reader_text: String::new(),
            trace: None,
            error: None,
        };
        let user = self.prompts.get(TemplateId::Reader).render(&[
            (prompt::SLOT_CONTEXTS, &format_contexts(&texts)),
            (prompt::SLOT_QUESTION, &q.stem),
            (prompt::SLOT_OPTIONS, &format_options(&q.options)),
        ]);
        let ex = user.map_err(|e| e.to_string()).and_then(|user| {
            let request =
                ChatRequest::new(self.config.reader.endpoint.clone(), Stage::Reader, user)
                    .temperature(self.config.reader.temperature)
                    .max_tokens(self.config.reader.max_tokens);
            self.gateway.chat(request).map_err(|e| e.to_string())
        });
        match ex {
            Ok(ex) => {
                answer.reader_text = ex.raw_text.clone();
                answer.trace = ex.reasoning_trace.clone();
                match extract_choice(&ex.final_text, &q.options) {
                    Ok(l) => {
                        answer.correct = l == q.gold;
                        answer.letter = Some(l);
                    }
                    Err(e) => answer.error = Some(e.to_string()),
                }
                (answer, Some(ex))
            }
            Err(e) => {
                warn!("reader failed on {}: {e}", q.id);
                answer.error = Some(e);
                (answer, None)
            }
        }
    }

    pub fn evaluate(&self, questions: &[McQuestion]) -> Result<RagReport, RagError> {
        self.config.validate().map_err(RagError::Config)?;
        if questions.is_empty() {
            return Err(RagError::EmptyDataset);
        }
        let results: Vec<_> = questions.par_iter().map(|q| self.answer(q)).collect();
        let mut answers = Vec::with_capacity(results.len());
        let mut transcript = Vec::new();
        for (a, ex) in results {
            answers.push(a);
            transcript.extend(ex);
        }
        Ok(RagReport::new(answers, transcript))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RagSummary {
    pub accuracy: f64,
    pub total: usize,
    pub correct: usize,
    pub incorrect: usize,
    pub abstained: usize,
}

impl fmt::Display for RagSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "accuracy {:.4} ({} correct, {} incorrect, {} abstained, {} total)",
            self.accuracy, self.correct, self.incorrect, self.abstained, self.total
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RagReport {
    pub answers: Vec<RagAnswer>,
    pub metric: MetricReport,
    pub summary: RagSummary,
    pub transcript: Vec<ChatExchange>,
}

impl RagReport {
    fn new(answers: Vec<RagAnswer>, transcript: Vec<ChatExchange>) -> Self {
        let per_query: BTreeMap<String, f64> = answers
            .iter()
            .map(|a| (a.question_id.clone(), if a.correct { 1.0 } else { 0.0 }))
            .collect();
        let metric = MetricReport::from_per_query("accuracy", None, per_query, 0);
        let correct = answers.iter().filter(|a| a.correct).count();
        let abstained = answers.iter().filter(|a| a.letter.is_none()).count();
        let summary = RagSummary {
            accuracy: metric.mean,
            total: answers.len(),
            correct,
            incorrect: answers.len() - correct - abstained,
            abstained,
        };
        RagReport {
            answers,
            metric,
            summary,
            transcript,
        }
    }
}
