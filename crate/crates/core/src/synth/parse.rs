//! Parsers for the shapes generation prompts ask for.

use regex::Regex;
use serde_json::Value;
use std::sync::OnceLock;

fn item_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(\d{1,3})[.)]\s*(.*)$").expect("valid regex"))
}

fn strip_brackets(s: &str) -> &str {
    let s = s.trim();
    match s.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
        Some(inner) if !inner.contains('[') && !inner.contains(']') => inner.trim(),
        _ => s,
    }
}

/// Parses a `1. …` / `1) …` list. Returns the first run numbered 1, 2, 3, …;
/// indented lines continue the previous item. `None` when no item 1 exists.
pub fn numbered_list(text: &str) -> Option<Vec<String>> {
    let mut items: Vec<String> = Vec::new();
    let mut started = false;
    for line in text.lines() {
        if let Some(caps) = item_re().captures(line) {
            let n: usize = caps[1].parse().ok()?;
            if n == items.len() + 1 {
                started = true;
                items.push(strip_brackets(&caps[2]).to_string());
                continue;
            }
            if started {
                break;
            }
            continue;
        }
        if !started || line.trim().is_empty() {
            continue;
        }
        if line.starts_with(char::is_whitespace) {
            let last = items.last_mut().expect("started");
            if !last.is_empty() {
                last.push(' ');
            }
            last.push_str(line.trim());
        }
    }
    let items: Vec<String> = items.into_iter().filter(|s| !s.is_empty()).collect();
    (!items.is_empty()).then_some(items)
}

/// Pulls a JSON object out of model text: a ```json fence first, then any
/// fence, then the outermost braces.
pub fn json_object(text: &str) -> Option<serde_json::Map<String, Value>> {
    let mut candidates: Vec<&str> = Vec::new();
    if let Some(start) = text.find("```json") {
        let body = &text[start + "```json".len()..];
        candidates.push(body.split("```").next().unwrap_or(body));
    }
    if let Some(start) = text.find("```") {
        let body = &text[start + 3..];
        candidates.push(body.split("```").next().unwrap_or(body));
    }
    if let (Some(a), Some(b)) = (text.find('{'), text.rfind('}')) {
        if a < b {
            candidates.push(&text[a..=b]);
        }
    }
    candidates.into_iter().find_map(|c| {
        let c = c.trim();
        let c = match (c.find('{'), c.rfind('}')) {
            (Some(a), Some(b)) if a < b => &c[a..=b],
            _ => return None,
        };
        match serde_json::from_str::<Value>(c) {
            Ok(Value::Object(map)) => Some(map),
            _ => None,
        }
    })
}
