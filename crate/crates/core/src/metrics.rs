//! Rank metrics over runs and relevance judgments.
//!
//! A document is relevant when its grade is above zero. Queries without any
//! relevant document are left out of means and counted separately.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{QRels, Ranking};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("query `{0}` appears in only one of the paired runs")]
    MissingQuery(String),
    #[error("query `{0}` has more than one ranking in a run")]
    DuplicateQuery(String),
}

/// Linear-gain nDCG; 0 when the query has no positive grade.
pub fn ndcg_at_k(ranking: &Ranking, qrels: &QRels, k: usize) -> f64 {
    let q = ranking.query_id.as_str();
    let dcg: f64 = ranking
        .doc_ids()
        .take(k)
        .enumerate()
        .map(|(i, d)| qrels.grade(q, d) as f64 / ((i + 2) as f64).log2())
        .sum();
    let mut grades: Vec<u32> = qrels.judged(q).map(|(_, g)| g).collect();
    grades.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = grades
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| g as f64 / ((i + 2) as f64).log2())
        .sum();
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

/// Average precision over the top `k`, normalised by `min(R, k)`.
pub fn map_at_k(ranking: &Ranking, qrels: &QRels, k: usize) -> f64 {
    let q = ranking.query_id.as_str();
    let r = qrels.relevant_count(q);
    if r == 0 || k == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, d) in ranking.doc_ids().take(k).enumerate() {
        if qrels.grade(q, d) > 0 {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / r.min(k) as f64
}

pub fn recall_at_k(ranking: &Ranking, qrels: &QRels, k: usize) -> f64 {
    let q = ranking.query_id.as_str();
    let r = qrels.relevant_count(q);
    if r == 0 {
        return 0.0;
    }
    let found = ranking
        .doc_ids()
        .take(k)
        .filter(|d| qrels.grade(q, d) > 0)
        .count();
    found as f64 / r as f64
}

/// Reciprocal rank of the first relevant document.
pub fn mrr(ranking: &Ranking, qrels: &QRels) -> f64 {
    let q = ranking.query_id.as_str();
    ranking
        .doc_ids()
        .position(|d| qrels.grade(q, d) > 0)
        .map_or(0.0, |p| 1.0 / (p + 1) as f64)
}

/// Rank change of one document between two runs. Positive when the new
/// rank is better (smaller) than the original one.
pub fn paired_delta(r_og: usize, r_new: usize) -> f64 {
    let (og, new) = (r_og as f64, r_new as f64);
    if r_og > r_new {
        og / new - 1.0
    } else {
        1.0 - new / og
    }
}

/// Mean paired delta over a query's relevant documents, `None` when it has
/// none. A document missing from a run ranks just past the end of it.
pub fn p_mrr_query(og: &Ranking, new: &Ranking, qrels: &QRels) -> Option<f64> {
    let rel: Vec<&str> = qrels.relevant(&og.query_id).collect();
    if rel.is_empty() {
        return None;
    }
    let total: f64 = rel
        .iter()
        .map(|d| {
            let r_og = og.rank_of(d).unwrap_or(og.len() + 1);
            let r_new = new.rank_of(d).unwrap_or(new.len() + 1);
            paired_delta(r_og, r_new)
        })
        .sum();
    Some(total / rel.len() as f64)
}

fn by_query(run: &[Ranking]) -> Result<BTreeMap<&str, &Ranking>, MetricError> {
    let mut map = BTreeMap::new();
    for r in run {
        if map.insert(r.query_id.as_str(), r).is_some() {
            return Err(MetricError::DuplicateQuery(r.query_id.clone()));
        }
    }
    Ok(map)
}

/// Paired rank metric between an original-instruction run and a
/// modified-instruction run, on a percent scale.
pub fn p_mrr(
    og_run: &[Ranking],
    new_run: &[Ranking],
    qrels: &QRels,
) -> Result<MetricReport, MetricError> {
    let og = by_query(og_run)?;
    let new = by_query(new_run)?;
    if let Some(q) = og
        .keys()
        .find(|q| !new.contains_key(*q))
        .or_else(|| new.keys().find(|q| !og.contains_key(*q)))
    {
        return Err(MetricError::MissingQuery(q.to_string()));
    }
    let mut per_query = BTreeMap::new();
    let mut excluded = 0;
    for (q, og_r) in &og {
        match p_mrr_query(og_r, new[q], qrels) {
            Some(v) => {
                per_query.insert(q.to_string(), v * 100.0);
            }
            None => excluded += 1,
        }
    }
    Ok(MetricReport::from_per_query(
        "p-MRR", None, per_query, excluded,
    ))
}

/// Fraction of gold questions whose prediction matches exactly.
pub fn choice_accuracy(
    predictions: &HashMap<String, String>,
    gold: &BTreeMap<String, String>,
) -> f64 {
    if gold.is_empty() {
        return 0.0;
    }
    let correct = gold
        .iter()
        .filter(|(q, g)| predictions.get(*q) == Some(g))
        .count();
    correct as f64 / gold.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Metric {
    Ndcg(usize),
    Map(usize),
    Recall(usize),
    Mrr,
}

impl Metric {
    pub fn cutoff(self) -> Option<usize> {
        match self {
            Metric::Ndcg(k) | Metric::Map(k) | Metric::Recall(k) => Some(k),
            Metric::Mrr => None,
        }
    }

    pub fn compute(self, ranking: &Ranking, qrels: &QRels) -> f64 {
        match self {
            Metric::Ndcg(k) => ndcg_at_k(ranking, qrels, k),
            Metric::Map(k) => map_at_k(ranking, qrels, k),
            Metric::Recall(k) => recall_at_k(ranking, qrels, k),
            Metric::Mrr => mrr(ranking, qrels),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Ndcg(k) => write!(f, "nDCG@{k}"),
            Metric::Map(k) => write!(f, "MAP@{k}"),
            Metric::Recall(k) => write!(f, "Recall@{k}"),
            Metric::Mrr => f.write_str("MRR"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    pub per_query: BTreeMap<String, f64>,
    pub mean: f64,
    /// Queries left out because nothing is relevant for them.
    #[serde(default)]
    pub excluded: usize,
}

impl MetricReport {
    pub fn from_per_query(
        metric: impl Into<String>,
        k: Option<usize>,
        per_query: BTreeMap<String, f64>,
        excluded: usize,
    ) -> Self {
        let mean = if per_query.is_empty() {
            0.0
        } else {
            per_query.values().sum::<f64>() / per_query.len() as f64
        };
        MetricReport {
            metric: metric.into(),
            k,
            per_query,
            mean,
            excluded,
        }
    }
}

/// Scores a run against qrels. Every query with a relevant document is
/// evaluated; one the run does not cover scores as an empty ranking.
pub fn evaluate(
    run: &[Ranking],
    qrels: &QRels,
    metric: Metric,
) -> Result<MetricReport, MetricError> {
    let by_q = by_query(run)?;
    let mut per_query = BTreeMap::new();
    let mut excluded = 0;
    let judged: BTreeSet<&str> = qrels.query_ids().collect();
    for q in judged {
        if qrels.relevant_count(q) == 0 {
            excluded += 1;
            continue;
        }
        let value = match by_q.get(q) {
            Some(r) => metric.compute(r, qrels),
            None => 0.0,
        };
        per_query.insert(q.to_string(), value);
    }
    Ok(MetricReport::from_per_query(
        metric.to_string(),
        metric.cutoff(),
        per_query,
        excluded,
    ))
}

/// Aligned text table of report means.
pub fn format_table(reports: &[MetricReport]) -> String {
    let width = reports
        .iter()
        .map(|r| r.metric.len())
        .max()
        .unwrap_or(6)
        .max(6);
    let mut out = format!(
        "{:<width$}  {:>9}  {:>7}  {:>8}\n",
        "metric", "mean", "queries", "excluded"
    );
    for r in reports {
        out.push_str(&format!(
            "{:<width$}  {:>9.4}  {:>7}  {:>8}\n",
            r.metric,
            r.mean,
            r.per_query.len(),
            r.excluded
        ));
    }
    out
}

/// Average of per-collection scores that use different metrics. The
/// components stay listed so the mix is visible wherever it is reported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeterogeneousMean {
    pub components: Vec<(String, String, f64)>,
    pub mean: f64,
}

impl HeterogeneousMean {
    /// `parts` holds (collection, report) pairs.
    pub fn new(parts: &[(&str, &MetricReport)]) -> Self {
        let components: Vec<_> = parts
            .iter()
            .map(|(name, r)| (name.to_string(), r.metric.clone(), r.mean))
            .collect();
        let mean = if components.is_empty() {
            0.0
        } else {
            components.iter().map(|c| c.2).sum::<f64>() / components.len() as f64
        };
        HeterogeneousMean { components, mean }
    }

    pub fn label(&self) -> String {
        let parts: Vec<String> = self
            .components
            .iter()
            .map(|(c, m, _)| format!("{c}:{m}"))
            .collect();
        format!("mixed mean [{}]", parts.join(", "))
    }
}
