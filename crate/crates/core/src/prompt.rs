//! Prompt templates with `[FILL_*]`-style slots.
//!
//! The built-in templates live in `prompts/*.txt`. Rendering substitutes each
//! slot in a single pass over the template, so slot-like text inside a filled
//! value is never expanded a second time.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

pub const SLOT_QUERY: &str = "[FILL_QUERY_HERE]";
pub const SLOT_EXAMPLES: &str = "[FILL_EXAMPLES_HERE]";
pub const SLOT_PERSONA: &str = "[FILL_PERSONA_HERE]";
pub const SLOT_PASSAGE: &str = "[FILL_PASSAGE_HERE]";
pub const SLOT_POSITIVE_DESCS: &str = "[POSITIVE_PASSAGE_DESCRIPTIONS_HERE]";
pub const SLOT_MATERIAL: &str = "[FILL_MATERIAL_DESCRIPTION]";
pub const SLOT_CONTEXTS: &str = "[FILL_CONTEXTS_HERE]";
pub const SLOT_QUESTION: &str = "[FILL_QUESTION_HERE]";
pub const SLOT_OPTIONS: &str = "[FILL_OPTIONS_HERE]";

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template `{template}` lacks slot {slot}")]
    MissingSlot { template: String, slot: String },
    #[error("no value supplied for slot {slot} of template `{template}`")]
    UnfilledSlot { template: String, slot: String },
    #[error("reading template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Which built-in prompt a template stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TemplateId {
    Persona,
    Daily,
    Expert,
    Solve,
    Extract,
    Negatives,
    Passage,
    Judge,
    Reader,
}

impl TemplateId {
    pub const ALL: [TemplateId; 9] = [
        TemplateId::Persona,
        TemplateId::Daily,
        TemplateId::Expert,
        TemplateId::Solve,
        TemplateId::Extract,
        TemplateId::Negatives,
        TemplateId::Passage,
        TemplateId::Judge,
        TemplateId::Reader,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TemplateId::Persona => "persona",
            TemplateId::Daily => "daily",
            TemplateId::Expert => "expert",
            TemplateId::Solve => "solve",
            TemplateId::Extract => "extract",
            TemplateId::Negatives => "negative",
            TemplateId::Passage => "passage",
            TemplateId::Judge => "judge",
            TemplateId::Reader => "reader",
        }
    }

    pub fn slots(self) -> &'static [&'static str] {
        match self {
            TemplateId::Persona => &[SLOT_QUERY, SLOT_EXAMPLES],
            TemplateId::Daily => &[SLOT_QUERY, SLOT_PERSONA],
            TemplateId::Expert | TemplateId::Solve => &[SLOT_QUERY],
            TemplateId::Extract => &[SLOT_PASSAGE],
            TemplateId::Negatives => &[SLOT_QUERY, SLOT_POSITIVE_DESCS],
            TemplateId::Passage => &[SLOT_MATERIAL],
            TemplateId::Judge => &[SLOT_QUERY, SLOT_PASSAGE],
            TemplateId::Reader => &[SLOT_CONTEXTS, SLOT_QUESTION, SLOT_OPTIONS],
        }
    }

    fn builtin_text(self) -> &'static str {
        match self {
            TemplateId::Persona => include_str!("../prompts/persona.txt"),
            TemplateId::Daily => include_str!("../prompts/daily.txt"),
            TemplateId::Expert => include_str!("../prompts/expert.txt"),
            TemplateId::Solve => include_str!("../prompts/solve.txt"),
            TemplateId::Extract => include_str!("../prompts/extract.txt"),
            TemplateId::Negatives => include_str!("../prompts/negative.txt"),
            TemplateId::Passage => include_str!("../prompts/passage.txt"),
            TemplateId::Judge => include_str!("../prompts/judge.txt"),
            TemplateId::Reader => include_str!("../prompts/reader.txt"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    id: TemplateId,
    text: String,
}

impl Template {
    pub fn builtin(id: TemplateId) -> Self {
        Template {
            id,
            text: id.builtin_text().trim_end().to_string(),
        }
    }

    /// A user-supplied replacement. It must contain every slot the built-in
    /// template for `id` has.
    pub fn custom(id: TemplateId, text: impl Into<String>) -> Result<Self, TemplateError> {
        let text = text.into().trim_end().to_string();
        for slot in id.slots() {
            if !text.contains(slot) {
                return Err(TemplateError::MissingSlot {
                    template: id.name().into(),
                    slot: (*slot).into(),
                });
            }
        }
        Ok(Template { id, text })
    }

    pub fn from_file(id: TemplateId, path: &Path) -> Result<Self, TemplateError> {
        let text = fs::read_to_string(path).map_err(|source| TemplateError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::custom(id, text)
    }

    pub fn id(&self) -> TemplateId {
        self.id
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn render(&self, fills: &[(&str, &str)]) -> Result<String, TemplateError> {
        let fills: BTreeMap<&str, &str> = fills.iter().copied().collect();
        for slot in self.id.slots() {
            if !fills.contains_key(slot) {
                return Err(TemplateError::UnfilledSlot {
                    template: self.id.name().into(),
                    slot: (*slot).into(),
                });
            }
        }
        let mut out = String::with_capacity(self.text.len() + 256);
        let mut rest = self.text.as_str();
        loop {
            let next = self
                .id
                .slots()
                .iter()
                .filter_map(|slot| rest.find(slot).map(|pos| (pos, *slot)))
                .min_by_key(|(pos, _)| *pos);
            match next {
                Some((pos, slot)) => {
                    out.push_str(&rest[..pos]);
                    out.push_str(fills[slot]);
                    rest = &rest[pos + slot.len()..];
                }
                None => {
                    out.push_str(rest);
                    break;
                }
            }
        }
        Ok(out)
    }
}

/// The full set of templates one run uses.
#[derive(Debug, Clone)]
pub struct PromptSet {
    templates: BTreeMap<TemplateId, Template>,
}

impl Default for PromptSet {
    fn default() -> Self {
        PromptSet {
            templates: TemplateId::ALL
                .iter()
                .map(|id| (*id, Template::builtin(*id)))
                .collect(),
        }
    }
}

impl PromptSet {
    pub fn with(mut self, template: Template) -> Self {
        self.templates.insert(template.id(), template);
        self
    }

    pub fn get(&self, id: TemplateId) -> &Template {
        &self.templates[&id]
    }
}
