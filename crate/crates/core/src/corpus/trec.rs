//! TREC run files (`qid Q0 docid rank score tag`) and qrels (`qid 0 docid grade`).

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{CorpusError, QRels, RankedDoc, Ranking};

/// Renders rankings as TREC run lines. Ranks are recomputed from list order
/// and scores are printed with six decimals.
pub fn format_run(rankings: &[Ranking]) -> String {
    let mut out = String::new();
    for ranking in rankings {
        for (i, e) in ranking.entries().iter().enumerate() {
            let _ = writeln!(
                out,
                "{} Q0 {} {} {:.6} {}",
                ranking.query_id,
                e.doc_id,
                i + 1,
                e.score,
                ranking.tag
            );
        }
    }
    out
}

pub fn write_run(rankings: &[Ranking], path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    fs::write(path, format_run(rankings)).map_err(|e| CorpusError::io(path, e))
}

pub fn read_run(path: impl AsRef<Path>) -> Result<Vec<Ranking>, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    parse_run(&text, path)
}

struct RunLine {
    rank: usize,
    doc_id: String,
    score: f64,
}

/// Parses a run file. Queries come back in order of first appearance; within
/// a query, lines are ordered by their rank column and the scores must not
/// increase along that order.
pub fn parse_run(text: &str, path: &Path) -> Result<Vec<Ranking>, CorpusError> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, (String, Vec<RunLine>)> = HashMap::new();

    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: &str| CorpusError::MalformedLine {
            path: path.to_path_buf(),
            line_no: idx + 1,
            excerpt: line.to_string(),
            reason: reason.to_string(),
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [qid, _q0, doc_id, rank, score, tag] = fields[..] else {
            return Err(malformed("expected 6 fields"));
        };
        let rank: usize = rank
            .parse()
            .map_err(|_| malformed("rank is not an integer"))?;
        if rank == 0 {
            return Err(malformed("ranks are 1-based"));
        }
        let score: f64 = score
            .parse()
            .map_err(|_| malformed("score is not a number"))?;
        if !score.is_finite() {
            return Err(malformed("score is not finite"));
        }
        let (group_tag, lines) = groups.entry(qid.to_string()).or_insert_with(|| {
            order.push(qid.to_string());
            (tag.to_string(), Vec::new())
        });
        if group_tag != tag {
            return Err(malformed(
                "run tag differs from earlier lines of this query",
            ));
        }
        lines.push(RunLine {
            rank,
            doc_id: doc_id.to_string(),
            score,
        });
    }

    let mut rankings = Vec::with_capacity(order.len());
    for qid in order {
        let (tag, mut lines) = groups.remove(&qid).expect("grouped above");
        lines.sort_by_key(|l| l.rank);
        if let Some(w) = lines.windows(2).find(|w| w[0].rank == w[1].rank) {
            return Err(CorpusError::MalformedLine {
                path: path.to_path_buf(),
                line_no: 0,
                excerpt: format!("{qid} rank {}", w[0].rank),
                reason: "rank repeated within a query".into(),
            });
        }
        let entries = lines
            .into_iter()
            .map(|l| RankedDoc::new(l.doc_id, l.score))
            .collect();
        rankings.push(Ranking::from_ordered(qid, entries, tag)?);
    }
    Ok(rankings)
}

pub fn read_qrels(path: impl AsRef<Path>) -> Result<QRels, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    parse_qrels(&text, path)
}

pub fn parse_qrels(text: &str, path: &Path) -> Result<QRels, CorpusError> {
    let mut qrels = QRels::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: &str| CorpusError::MalformedLine {
            path: path.to_path_buf(),
            line_no: idx + 1,
            excerpt: line.to_string(),
            reason: reason.to_string(),
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [qid, _iter, doc_id, grade] = fields[..] else {
            return Err(malformed("expected 4 fields"));
        };
        let grade: i64 = grade
            .parse()
            .map_err(|_| malformed("grade is not an integer"))?;
        let grade = u32::try_from(grade).map_err(|_| malformed("grade must be non-negative"))?;
        qrels.insert(qid, doc_id, grade)?;
    }
    Ok(qrels)
}

pub fn write_qrels(qrels: &QRels, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let mut out = String::new();
    for (q, d, g) in qrels.iter() {
        let _ = writeln!(out, "{q} 0 {d} {g}");
    }
    fs::write(path, out).map_err(|e| CorpusError::io(path, e))
}
