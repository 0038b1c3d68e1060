//! Shared data model and on-disk formats.

mod jsonl;
mod trec;

pub use jsonl::{parse_jsonl, read_jsonl, write_jsonl, JsonlRecord};
pub use trec::{format_run, parse_qrels, parse_run, read_qrels, read_run, write_qrels, write_run};

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: line {line_no}: malformed record: {reason} (`{excerpt}`)")]
    MalformedLine {
        path: PathBuf,
        line_no: usize,
        excerpt: String,
        reason: String,
    },
    #[error("{path}: line {line_no}: missing field `{name}`")]
    MissingField {
        path: PathBuf,
        line_no: usize,
        name: String,
    },
    #[error("duplicate document `{doc_id}` in ranking for query `{query_id}`")]
    DuplicateDoc { query_id: String, doc_id: String },
    #[error("scores for query `{query_id}` are not in descending order at rank {rank}")]
    NonMonotoneScore { query_id: String, rank: usize },
    #[error("non-finite score for `{doc_id}` in query `{query_id}`")]
    NonFiniteScore { query_id: String, doc_id: String },
    #[error("duplicate judgment for ({query_id}, {doc_id})")]
    DuplicateJudgment { query_id: String, doc_id: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CorpusError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.into(),
            source,
        }
    }
}

#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum QueryKind {
    #[default]
    Seed,
    Daily,
    Expert,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
    #[serde(default)]
    pub kind: QueryKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub persona_id: Option<String>,
}

impl Query {
    pub fn seed(id: impl Into<String>, text: impl Into<String>) -> Self {
        Query {
            id: id.into(),
            text: text.into(),
            scenario: None,
            kind: QueryKind::Seed,
            persona_id: None,
        }
    }

    /// Text shown to models downstream of expansion. Daily queries carry their
    /// scenario in front of the question.
    pub fn prompt_text(&self) -> String {
        match &self.scenario {
            Some(scenario) if !scenario.trim().is_empty() => {
                format!("{} {}", scenario.trim(), self.text.trim())
            }
            _ => self.text.clone(),
        }
    }

    pub fn check(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("query id is empty".into());
        }
        if self.text.trim().is_empty() {
            return Err(format!("query `{}` has empty text", self.id));
        }
        match (self.kind, self.scenario.is_some()) {
            (QueryKind::Daily, false) => Err(format!("daily query `{}` has no scenario", self.id)),
            (QueryKind::Seed | QueryKind::Expert, true) => {
                Err(format!("non-daily query `{}` carries a scenario", self.id))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PassageRole {
    Positive,
    HardNegative,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub id: String,
    pub text: String,
    pub role: PassageRole,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub material_desc: Option<String>,
}

impl Passage {
    pub fn check(&self) -> Result<(), String> {
        if self.text.trim().is_empty() {
            return Err(format!("passage `{}` has empty text", self.id));
        }
        Ok(())
    }
}

/// A retrieval corpus entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairSource {
    SeedPool,
    Synthesized,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub query: Query,
    pub passage: Passage,
    pub intended_label: bool,
    pub source: PairSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning_trace: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge_verdict: Option<bool>,
}

impl LabeledPair {
    /// Builds a pair whose label follows the passage role.
    pub fn new(query: Query, passage: Passage, source: PairSource) -> Self {
        let intended_label = passage.role == PassageRole::Positive;
        LabeledPair {
            query,
            passage,
            intended_label,
            source,
            reasoning_trace: None,
            judge_verdict: None,
        }
    }

    /// Pairs are identified by their passage; each passage belongs to one query.
    pub fn id(&self) -> &str {
        &self.passage.id
    }

    pub fn check(&self) -> Result<(), String> {
        self.query.check()?;
        self.passage.check()?;
        let expected = self.passage.role == PassageRole::Positive;
        if self.intended_label != expected {
            return Err(format!(
                "pair `{}`: label {} contradicts passage role {:?}",
                self.id(),
                self.intended_label,
                self.passage.role
            ));
        }
        Ok(())
    }
}

/// Graded relevance judgments keyed by query then document.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QRels {
    judgments: BTreeMap<String, BTreeMap<String, u32>>,
}

impl QRels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(
        &mut self,
        query_id: impl Into<String>,
        doc_id: impl Into<String>,
        grade: u32,
    ) -> Result<(), CorpusError> {
        let query_id = query_id.into();
        let doc_id = doc_id.into();
        let docs = self.judgments.entry(query_id.clone()).or_default();
        if docs.contains_key(&doc_id) {
            return Err(CorpusError::DuplicateJudgment { query_id, doc_id });
        }
        docs.insert(doc_id, grade);
        Ok(())
    }

    /// Absent judgments have grade 0.
    pub fn grade(&self, query_id: &str, doc_id: &str) -> u32 {
        self.judgments
            .get(query_id)
            .and_then(|docs| docs.get(doc_id))
            .copied()
            .unwrap_or(0)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    pub fn judged(&self, query_id: &str) -> impl Iterator<Item = (&str, u32)> {
        self.judgments
            .get(query_id)
            .into_iter()
            .flat_map(|docs| docs.iter().map(|(d, g)| (d.as_str(), *g)))
    }

    /// Documents with grade > 0 for the query.
    pub fn relevant(&self, query_id: &str) -> impl Iterator<Item = &str> {
        self.judged(query_id)
            .filter(|(_, g)| *g > 0)
            .map(|(d, _)| d)
    }

    pub fn relevant_count(&self, query_id: &str) -> usize {
        self.relevant(query_id).count()
    }

    pub fn len(&self) -> usize {
        self.judgments.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, u32)> {
        self.judgments
            .iter()
            .flat_map(|(q, docs)| docs.iter().map(move |(d, g)| (q.as_str(), d.as_str(), *g)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedDoc {
    pub doc_id: String,
    pub score: f64,
}

impl RankedDoc {
    pub fn new(doc_id: impl Into<String>, score: f64) -> Self {
        RankedDoc {
            doc_id: doc_id.into(),
            score,
        }
    }
}

/// Ordered candidate list for one query. Scores never increase along the
/// list and doc ids are unique; rank `i` is position `i - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub query_id: String,
    entries: Vec<RankedDoc>,
    pub tag: String,
}

/// Descending score, then ascending doc id.
pub fn score_order(a: &RankedDoc, b: &RankedDoc) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.doc_id.cmp(&b.doc_id))
}

impl Ranking {
    /// Sorts entries by descending score with ties broken by ascending doc id.
    pub fn new(
        query_id: impl Into<String>,
        mut entries: Vec<RankedDoc>,
        tag: impl Into<String>,
    ) -> Result<Self, CorpusError> {
        let query_id = query_id.into();
        check_entries(&query_id, &entries)?;
        entries.sort_by(score_order);
        Ok(Ranking {
            query_id,
            entries,
            tag: tag.into(),
        })
    }

    /// Keeps the given order, which must already have non-increasing scores.
    /// Used where ties follow a rule other than doc id (reranking keeps the
    /// retrieval order among equal scores).
    pub fn from_ordered(
        query_id: impl Into<String>,
        entries: Vec<RankedDoc>,
        tag: impl Into<String>,
    ) -> Result<Self, CorpusError> {
        let query_id = query_id.into();
        check_entries(&query_id, &entries)?;
        if let Some(pos) = entries.windows(2).position(|w| w[1].score > w[0].score) {
            return Err(CorpusError::NonMonotoneScore {
                query_id,
                rank: pos + 2,
            });
        }
        Ok(Ranking {
            query_id,
            entries,
            tag: tag.into(),
        })
    }

    pub fn entries(&self) -> &[RankedDoc] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.doc_id.as_str())
    }

    /// 1-based rank of a document, if present.
    pub fn rank_of(&self, doc_id: &str) -> Option<usize> {
        self.entries
            .iter()
            .position(|e| e.doc_id == doc_id)
            .map(|p| p + 1)
    }

    /// The first `k` entries as a new ranking.
    pub fn truncated(&self, k: usize) -> Ranking {
        Ranking {
            query_id: self.query_id.clone(),
            entries: self.entries.iter().take(k).cloned().collect(),
            tag: self.tag.clone(),
        }
    }
}

fn check_entries(query_id: &str, entries: &[RankedDoc]) -> Result<(), CorpusError> {
    let mut seen = HashSet::with_capacity(entries.len());
    for e in entries {
        if !e.score.is_finite() {
            return Err(CorpusError::NonFiniteScore {
                query_id: query_id.to_string(),
                doc_id: e.doc_id.clone(),
            });
        }
        if !seen.insert(e.doc_id.as_str()) {
            return Err(CorpusError::DuplicateDoc {
                query_id: query_id.to_string(),
                doc_id: e.doc_id.clone(),
            });
        }
    }
    Ok(())
}
