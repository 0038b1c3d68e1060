use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use super::{CorpusError, Document, LabeledPair, Query};

const EXCERPT_CHARS: usize = 80;

/// A record kind stored one-per-line in JSONL files.
pub trait JsonlRecord: Serialize + DeserializeOwned {
    /// Top-level keys that must be present on every line.
    const REQUIRED: &'static [&'static str];

    /// Checks invariants beyond the shape of the JSON.
    fn validate(&self) -> Result<(), String> {
        Ok(())
    }
}

impl JsonlRecord for Query {
    const REQUIRED: &'static [&'static str] = &["id", "text"];

    fn validate(&self) -> Result<(), String> {
        self.check()
    }
}

impl JsonlRecord for Document {
    const REQUIRED: &'static [&'static str] = &["id", "text"];

    fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("document id is empty".into());
        }
        Ok(())
    }
}

impl JsonlRecord for LabeledPair {
    const REQUIRED: &'static [&'static str] = &["query", "passage", "intended_label", "source"];

    fn validate(&self) -> Result<(), String> {
        self.check()
    }
}

fn excerpt(line: &str) -> String {
    let mut out: String = line.chars().take(EXCERPT_CHARS).collect();
    if line.chars().count() > EXCERPT_CHARS {
        out.push_str("...");
    }
    out
}

/// Parses JSONL text. Blank lines are skipped; line numbers are 1-based
/// physical lines.
pub fn parse_jsonl<T: JsonlRecord>(text: &str, path: &Path) -> Result<Vec<T>, CorpusError> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| CorpusError::MalformedLine {
            path: path.to_path_buf(),
            line_no,
            excerpt: excerpt(line),
            reason,
        };
        let value: Value = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| malformed("expected a JSON object".into()))?;
        if let Some(name) = T::REQUIRED.iter().find(|k| !obj.contains_key(**k)) {
            return Err(CorpusError::MissingField {
                path: path.to_path_buf(),
                line_no,
                name: name.to_string(),
            });
        }
        let record: T = serde_json::from_value(value).map_err(|e| malformed(e.to_string()))?;
        record.validate().map_err(malformed)?;
        out.push(record);
    }
    Ok(out)
}

pub fn read_jsonl<T: JsonlRecord>(path: impl AsRef<Path>) -> Result<Vec<T>, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    parse_jsonl(&text, path)
}

pub fn write_jsonl<T: Serialize>(records: &[T], path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| CorpusError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for record in records {
        serde_json::to_writer(&mut w, record)
            .map_err(|e| CorpusError::io(path, std::io::Error::other(e)))?;
        w.write_all(b"\n").map_err(|e| CorpusError::io(path, e))?;
    }
    w.flush().map_err(|e| CorpusError::io(path, e))
}
