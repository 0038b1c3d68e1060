//! Relevance judging and label-agreement filtering of synthesized pairs.

use std::sync::OnceLock;

use log::warn;
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{LabeledPair, Query};
use crate::gateway::{ChatExchange, ChatRequest, Gateway, GatewayError, Stage};
use crate::prompt::{self, PromptSet, TemplateError, TemplateId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum VerdictError {
    #[error("text contains neither `true` nor `false`")]
    NoVerdict,
    /// Never produced while the last occurrence decides; kept so callers can
    /// match on it if a stricter rule is adopted.
    #[error("text contains both `true` and `false`")]
    AmbiguousVerdict,
}

fn verdict_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(true|false)\b").unwrap())
}

/// Reads a true/false verdict out of free text. The last standalone
/// occurrence decides, since reasoning tends to weigh both before concluding.
pub fn parse_verdict(text: &str) -> Result<bool, VerdictError> {
    verdict_re()
        .find_iter(text)
        .last()
        .map(|m| m.as_str().eq_ignore_ascii_case("true"))
        .ok_or(VerdictError::NoVerdict)
}

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JudgeSettings {
    pub endpoint: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_judge_tokens")]
    pub max_tokens: u32,
}

fn default_judge_tokens() -> u32 {
    8192
}

impl JudgeSettings {
    pub fn on(endpoint: impl Into<String>) -> Self {
        JudgeSettings {
            endpoint: endpoint.into(),
            temperature: 0.0,
            max_tokens: default_judge_tokens(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub pair_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<String>,
    /// `None` when the reply held no verdict or the call failed.
    pub label: Option<bool>,
    pub raw_text: String,
}

/// The judge prompt filled for one query/passage pair.
pub fn judge_prompt(
    prompts: &PromptSet,
    query: &Query,
    passage_text: &str,
) -> Result<String, TemplateError> {
    prompts.get(TemplateId::Judge).render(&[
        (prompt::SLOT_QUERY, &query.prompt_text()),
        (prompt::SLOT_PASSAGE, passage_text),
    ])
}

pub struct Judge<'a> {
    gateway: &'a Gateway,
    settings: JudgeSettings,
    prompts: PromptSet,
}

impl<'a> Judge<'a> {
    pub fn new(gateway: &'a Gateway, settings: JudgeSettings) -> Self {
        Judge {
            gateway,
            settings,
            prompts: PromptSet::default(),
        }
    }

    pub fn with_prompts(mut self, prompts: PromptSet) -> Self {
        self.prompts = prompts;
        self
    }

    /// Asks for a verdict on one pair. A reply without a verdict is not an
    /// error; it comes back with `label: None`.
    pub fn judge(&self, pair: &LabeledPair) -> Result<(JudgeVerdict, ChatExchange), JudgeError> {
        let user = judge_prompt(&self.prompts, &pair.query, &pair.passage.text)?;
        let request = ChatRequest::new(self.settings.endpoint.clone(), Stage::Judge, user)
            .temperature(self.settings.temperature)
            .max_tokens(self.settings.max_tokens);
        let ex = self.gateway.chat(request)?;
        let verdict = JudgeVerdict {
            pair_id: pair.id().to_string(),
            trace: ex.reasoning_trace.clone(),
            label: parse_verdict(&ex.final_text).ok(),
            raw_text: ex.raw_text.clone(),
        };
        Ok((verdict, ex))
    }

    /// Judges every pair concurrently. Results come back in input order;
    /// a pair whose call failed gets an unparseable verdict.
    pub fn judge_all(&self, pairs: &[LabeledPair]) -> (Vec<JudgeVerdict>, Vec<ChatExchange>) {
        let results: Vec<_> = pairs.par_iter().map(|p| (p, self.judge(p))).collect();
        let mut verdicts = Vec::with_capacity(pairs.len());
        let mut transcript = Vec::with_capacity(pairs.len());
        for (pair, res) in results {
            match res {
                Ok((v, ex)) => {
                    verdicts.push(v);
                    transcript.push(ex);
                }
                Err(e) => {
                    warn!("judging {} failed: {e}", pair.id());
                    verdicts.push(JudgeVerdict {
                        pair_id: pair.id().to_string(),
                        trace: None,
                        label: None,
                        raw_text: String::new(),
                    });
                }
            }
        }
        (verdicts, transcript)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("verdict {index} is for `{verdict_id}` but pair {index} is `{pair_id}`")]
pub struct AlignmentError {
    pub index: usize,
    pub pair_id: String,
    pub verdict_id: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub total: usize,
    pub kept: usize,
    pub dropped_mismatch: usize,
    pub dropped_unparseable: usize,
    pub retention: f64,
}

impl FilterReport {
    pub fn table(&self) -> String {
        format!(
            "total               {:>8}\nkept                {:>8}\ndropped_mismatch    {:>8}\ndropped_unparseable {:>8}\nretention           {:>8.4}\n",
            self.total, self.kept, self.dropped_mismatch, self.dropped_unparseable, self.retention
        )
    }
}

/// Keeps the pairs whose verdict agrees with the intended label, in input
/// order. Kept pairs carry the verdict and the judge's reasoning trace.
pub fn filter_pairs(
    pairs: &[LabeledPair],
    verdicts: &[JudgeVerdict],
) -> Result<(Vec<LabeledPair>, FilterReport), AlignmentError> {
    if pairs.len() != verdicts.len() {
        let index = pairs.len().min(verdicts.len());
        return Err(AlignmentError {
            index,
            pair_id: pairs
                .get(index)
                .map(|p| p.id().to_string())
                .unwrap_or_default(),
            verdict_id: verdicts
                .get(index)
                .map(|v| v.pair_id.clone())
                .unwrap_or_default(),
        });
    }
    let mut report = FilterReport {
        total: pairs.len(),
        ..FilterReport::default()
    };
    let mut kept = Vec::new();
    for (index, (pair, verdict)) in pairs.iter().zip(verdicts).enumerate() {
        if pair.id() != verdict.pair_id {
            return Err(AlignmentError {
                index,
                pair_id: pair.id().to_string(),
                verdict_id: verdict.pair_id.clone(),
            });
        }
        match verdict.label {
            None => report.dropped_unparseable += 1,
            Some(label) if label != pair.intended_label => report.dropped_mismatch += 1,
            Some(label) => {
                let mut p = pair.clone();
                p.judge_verdict = Some(label);
                p.reasoning_trace = verdict.trace.clone();
                kept.push(p);
            }
        }
    }
    report.kept = kept.len();
    report.retention = if report.total == 0 {
        0.0
    } else {
        report.kept as f64 / report.total as f64
    };
    Ok((kept, report))
}
