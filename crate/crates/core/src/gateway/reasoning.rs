use thiserror::Error;

pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("reasoning block opened with <think> is never closed")]
pub struct UnterminatedTrace;

/// Splits a leading `<think>…</think>` block off model output.
///
/// Consecutive leading blocks are all consumed and their interiors joined with
/// a newline, so the returned final text never starts with a think block and
/// splitting it again is a no-op. Without a leading block the input is returned
/// unchanged as the final text.
pub fn split_reasoning(raw_text: &str) -> Result<(Option<String>, String), UnterminatedTrace> {
    let mut rest = raw_text.trim_start();
    if !rest.starts_with(THINK_OPEN) {
        return Ok((None, raw_text.to_string()));
    }
    let mut traces = Vec::new();
    while let Some(after_open) = rest.strip_prefix(THINK_OPEN) {
        let close = after_open.find(THINK_CLOSE).ok_or(UnterminatedTrace)?;
        traces.push(after_open[..close].trim());
        rest = after_open[close + THINK_CLOSE.len()..].trim_start();
    }
    Ok((Some(traces.join("\n")), rest.trim().to_string()))
}
