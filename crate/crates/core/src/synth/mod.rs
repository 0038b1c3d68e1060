//! Bottom-up training data synthesis.
//!
//! Each seed query is grounded in a persona, expanded into a daily-life query
//! and an expert-domain query, and each expansion is solved step by step. The
//! solution is distilled into positive material descriptions, hard-negative
//! descriptions are derived from those, and one passage is written per
//! description. Passages pair with their query as positive or hard-negative
//! examples.

pub mod parse;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{JsonlRecord, LabeledPair, PairSource, Passage, PassageRole, Query, QueryKind};
use crate::gateway::{ChatExchange, ChatRequest, Gateway, GatewayError, Stage};
use crate::prompt::{self, PromptSet, TemplateError, TemplateId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Persona {
    pub id: String,
    pub description: String,
}

impl JsonlRecord for Persona {
    const REQUIRED: &'static [&'static str] = &["id", "description"];

    fn validate(&self) -> Result<(), String> {
        if self.description.trim().is_empty() {
            return Err(format!("persona `{}` has an empty description", self.id));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaterialDesc {
    /// 1-based position in the extracted list.
    pub index: usize,
    pub text: String,
    pub polarity: Polarity,
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("model returned an empty {0} generation")]
    EmptyGeneration(Stage),
    #[error("daily expansion reply is not the expected JSON object: {0}")]
    JsonShape(String),
    #[error("{stage} list has {count} items, expected {min}-{max}")]
    RangeViolation {
        stage: Stage,
        count: usize,
        min: usize,
        max: usize,
    },
    #[error("{0} reply contains no numbered list")]
    ParseError(Stage),
    #[error("solution has {len} characters, below the floor of {floor}")]
    Degenerate { len: usize, floor: usize },
    #[error("persona pool is empty")]
    NoPersonas,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// Model binding for one generation stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSettings {
    pub endpoint: String,
    #[serde(default = "default_gen_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    /// Extra attempts after a malformed or degenerate reply.
    #[serde(default = "default_retries")]
    pub retries: u32,
}

fn default_gen_temperature() -> f64 {
    0.7
}

fn default_max_tokens() -> u32 {
    2048
}

fn default_retries() -> u32 {
    1
}

impl StageSettings {
    pub fn on(endpoint: impl Into<String>) -> Self {
        StageSettings {
            endpoint: endpoint.into(),
            temperature: default_gen_temperature(),
            max_tokens: default_max_tokens(),
            retries: default_retries(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub persona: StageSettings,
    pub daily: StageSettings,
    pub expert: StageSettings,
    pub solve: StageSettings,
    pub extract: StageSettings,
    pub negatives: StageSettings,
    pub passage: StageSettings,
    pub materials_min: usize,
    pub materials_max: usize,
    pub negatives_min: usize,
    pub negatives_max: usize,
    /// Personas sampled from the pool as examples per seed query.
    pub persona_samples: usize,
    /// Solutions shorter than this many characters count as degenerate.
    pub min_solution_chars: usize,
}

impl StageConfig {
    /// Every stage on one endpoint with the default bounds.
    pub fn uniform(endpoint: &str) -> Self {
        StageConfig {
            persona: StageSettings::on(endpoint),
            daily: StageSettings::on(endpoint),
            expert: StageSettings::on(endpoint),
            solve: StageSettings::on(endpoint),
            extract: StageSettings::on(endpoint),
            negatives: StageSettings::on(endpoint),
            passage: StageSettings::on(endpoint),
            materials_min: 3,
            materials_max: 7,
            negatives_min: 1,
            negatives_max: 5,
            persona_samples: 3,
            min_solution_chars: 50,
        }
    }

    pub fn endpoints(&self) -> impl Iterator<Item = (Stage, &str)> {
        [
            (Stage::Persona, &self.persona),
            (Stage::Daily, &self.daily),
            (Stage::Expert, &self.expert),
            (Stage::Solve, &self.solve),
            (Stage::Extract, &self.extract),
            (Stage::Negatives, &self.negatives),
            (Stage::Passage, &self.passage),
        ]
        .into_iter()
        .map(|(s, st)| (s, st.endpoint.as_str()))
    }

    /// Bounds must stay inside what the prompts ask for.
    pub fn validate(&self) -> Result<(), String> {
        if !(3 <= self.materials_min
            && self.materials_min <= self.materials_max
            && self.materials_max <= 7)
        {
            return Err(format!(
                "material bounds {}-{} must lie within 3-7",
                self.materials_min, self.materials_max
            ));
        }
        if !(1 <= self.negatives_min
            && self.negatives_min <= self.negatives_max
            && self.negatives_max <= 5)
        {
            return Err(format!(
                "negative bounds {}-{} must lie within 1-5",
                self.negatives_min, self.negatives_max
            ));
        }
        if self.persona_samples == 0 {
            return Err("persona_samples must be positive".into());
        }
        Ok(())
    }

    fn settings(&self, stage: Stage) -> &StageSettings {
        match stage {
            Stage::Persona => &self.persona,
            Stage::Daily => &self.daily,
            Stage::Expert => &self.expert,
            Stage::Solve => &self.solve,
            Stage::Extract => &self.extract,
            Stage::Negatives => &self.negatives,
            _ => &self.passage,
        }
    }
}

/// Records every exchange made on behalf of one unit of work.
#[derive(Debug, Default)]
pub struct CallLog {
    pub exchanges: Vec<ChatExchange>,
}

impl CallLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn chat(
        &mut self,
        gateway: &Gateway,
        request: ChatRequest,
    ) -> Result<ChatExchange, GatewayError> {
        let ex = gateway.chat(request)?;
        self.exchanges.push(ex.clone());
        Ok(ex)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageFailure {
    pub query_id: String,
    pub stage: Stage,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SynthReport {
    pub seeds_total: usize,
    pub seeds_succeeded: usize,
    pub pairs_emitted: usize,
    pub failures: Vec<StageFailure>,
}

#[derive(Debug, Default)]
pub struct SynthOutput {
    pub pairs: Vec<LabeledPair>,
    pub transcript: Vec<ChatExchange>,
    pub report: SynthReport,
}

fn numbered(descs: &[MaterialDesc]) -> String {
    descs
        .iter()
        .map(|d| format!("{}. {}", d.index, d.text))
        .collect::<Vec<_>>()
        .join("\n")
}

fn derive_seed(seed: u64, index: usize) -> u64 {
    // splitmix64 step keeps neighbouring indices far apart
    let mut z = seed.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

type SeedResult = Result<Vec<LabeledPair>, (Stage, SynthError)>;

pub struct Synthesizer<'a> {
    gateway: &'a Gateway,
    config: StageConfig,
    prompts: PromptSet,
    personas: Vec<Persona>,
}

impl<'a> Synthesizer<'a> {
    pub fn new(gateway: &'a Gateway, config: StageConfig, personas: Vec<Persona>) -> Self {
        Synthesizer {
            gateway,
            config,
            prompts: PromptSet::default(),
            personas,
        }
    }

    pub fn with_prompts(mut self, prompts: PromptSet) -> Self {
        self.prompts = prompts;
        self
    }

    pub fn config(&self) -> &StageConfig {
        &self.config
    }

    fn request(&self, stage: Stage, user: String) -> ChatRequest {
        let s = self.config.settings(stage);
        ChatRequest::new(s.endpoint.clone(), stage, user)
            .temperature(s.temperature)
            .max_tokens(s.max_tokens)
    }

    fn ask(&self, log: &mut CallLog, stage: Stage, user: String) -> Result<String, SynthError> {
        let ex = log.chat(self.gateway, self.request(stage, user))?;
        Ok(ex.final_text)
    }

    /// Uniform sample (without replacement) of example personas for the
    /// `index`-th seed query of a run seeded with `seed`.
    pub fn sample_personas(&self, seed: u64, index: usize) -> Result<Vec<Persona>, SynthError> {
        if self.personas.is_empty() {
            return Err(SynthError::NoPersonas);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, index));
        let k = self.config.persona_samples.min(self.personas.len());
        Ok(sample(&mut rng, self.personas.len(), k)
            .into_iter()
            .map(|i| self.personas[i].clone())
            .collect())
    }

    pub fn ground_persona(
        &self,
        log: &mut CallLog,
        seed_query: &Query,
        samples: &[Persona],
    ) -> Result<Persona, SynthError> {
        let examples = samples
            .iter()
            .map(|p| p.description.trim())
            .collect::<Vec<_>>()
            .join("\n");
        let user = self.prompts.get(TemplateId::Persona).render(&[
            (prompt::SLOT_QUERY, &seed_query.text),
            (prompt::SLOT_EXAMPLES, &examples),
        ])?;
        let text = self.ask(log, Stage::Persona, user)?;
        let text = text.trim();
        if text.is_empty() {
            return Err(SynthError::EmptyGeneration(Stage::Persona));
        }
        Ok(Persona {
            id: format!("{}-persona", seed_query.id),
            description: text.to_string(),
        })
    }

    pub fn expand_daily(
        &self,
        log: &mut CallLog,
        seed_query: &Query,
        persona: &Persona,
    ) -> Result<Query, SynthError> {
        let user = self.prompts.get(TemplateId::Daily).render(&[
            (prompt::SLOT_QUERY, &seed_query.text),
            (prompt::SLOT_PERSONA, &persona.description),
        ])?;
        let text = self.ask(log, Stage::Daily, user)?;
        if text.trim().is_empty() {
            return Err(SynthError::EmptyGeneration(Stage::Daily));
        }
        let obj = parse::json_object(&text)
            .ok_or_else(|| SynthError::JsonShape("no JSON object in reply".into()))?;
        let field = |key: &str| -> Result<String, SynthError> {
            match obj.get(key).and_then(|v| v.as_str()).map(str::trim) {
                Some(s) if !s.is_empty() => Ok(s.to_string()),
                Some(_) => Err(SynthError::JsonShape(format!("`{key}` is empty"))),
                None => Err(SynthError::JsonShape(format!("missing string `{key}`"))),
            }
        };
        Ok(Query {
            id: format!("{}-daily", seed_query.id),
            text: field("query")?,
            scenario: Some(field("scenario")?),
            kind: QueryKind::Daily,
            persona_id: Some(persona.id.clone()),
        })
    }

    pub fn expand_expert(
        &self,
        log: &mut CallLog,
        seed_query: &Query,
    ) -> Result<Query, SynthError> {
        let user = self
            .prompts
            .get(TemplateId::Expert)
            .render(&[(prompt::SLOT_QUERY, &seed_query.text)])?;
        let text = self.ask(log, Stage::Expert, user)?;
        let text = text.trim();
        if text.is_empty() {
            return Err(SynthError::EmptyGeneration(Stage::Expert));
        }
        Ok(Query {
            id: format!("{}-expert", seed_query.id),
            text: text.to_string(),
            scenario: None,
            kind: QueryKind::Expert,
            persona_id: None,
        })
    }

    /// Step-by-step solution text, returned as the model wrote it.
    pub fn solve_cot(&self, log: &mut CallLog, query: &Query) -> Result<String, SynthError> {
        let user = self
            .prompts
            .get(TemplateId::Solve)
            .render(&[(prompt::SLOT_QUERY, &query.prompt_text())])?;
        let floor = self.config.min_solution_chars;
        let mut last = SynthError::EmptyGeneration(Stage::Solve);
        for _ in 0..=self.config.solve.retries {
            let text = self.ask(log, Stage::Solve, user.clone())?;
            let len = text.trim().chars().count();
            if len == 0 {
                last = SynthError::EmptyGeneration(Stage::Solve);
            } else if len < floor {
                last = SynthError::Degenerate { len, floor };
            } else {
                return Ok(text);
            }
        }
        Err(last)
    }

    fn ask_list(
        &self,
        log: &mut CallLog,
        stage: Stage,
        user: String,
        (min, max): (usize, usize),
        polarity: Polarity,
    ) -> Result<Vec<MaterialDesc>, SynthError> {
        let retries = self.config.settings(stage).retries;
        let mut last = SynthError::ParseError(stage);
        for _ in 0..=retries {
            let text = self.ask(log, stage, user.clone())?;
            let Some(items) = parse::numbered_list(&text) else {
                last = SynthError::ParseError(stage);
                continue;
            };
            if !(min..=max).contains(&items.len()) {
                last = SynthError::RangeViolation {
                    stage,
                    count: items.len(),
                    min,
                    max,
                };
                continue;
            }
            return Ok(items
                .into_iter()
                .enumerate()
                .map(|(i, text)| MaterialDesc {
                    index: i + 1,
                    text,
                    polarity,
                })
                .collect());
        }
        Err(last)
    }

    pub fn extract_materials(
        &self,
        log: &mut CallLog,
        solution: &str,
    ) -> Result<Vec<MaterialDesc>, SynthError> {
        if solution.trim().is_empty() {
            return Err(SynthError::EmptyGeneration(Stage::Solve));
        }
        let user = self
            .prompts
            .get(TemplateId::Extract)
            .render(&[(prompt::SLOT_PASSAGE, solution)])?;
        self.ask_list(
            log,
            Stage::Extract,
            user,
            (self.config.materials_min, self.config.materials_max),
            Polarity::Positive,
        )
    }

    pub fn gen_negative_descs(
        &self,
        log: &mut CallLog,
        query: &Query,
        positives: &[MaterialDesc],
    ) -> Result<Vec<MaterialDesc>, SynthError> {
        if positives.is_empty() {
            return Err(SynthError::RangeViolation {
                stage: Stage::Extract,
                count: 0,
                min: self.config.materials_min,
                max: self.config.materials_max,
            });
        }
        let user = self.prompts.get(TemplateId::Negatives).render(&[
            (prompt::SLOT_QUERY, &query.prompt_text()),
            (prompt::SLOT_POSITIVE_DESCS, &numbered(positives)),
        ])?;
        self.ask_list(
            log,
            Stage::Negatives,
            user,
            (self.config.negatives_min, self.config.negatives_max),
            Polarity::Negative,
        )
    }

    pub fn gen_passage(
        &self,
        log: &mut CallLog,
        passage_id: impl Into<String>,
        desc: &MaterialDesc,
    ) -> Result<Passage, SynthError> {
        let user = self
            .prompts
            .get(TemplateId::Passage)
            .render(&[(prompt::SLOT_MATERIAL, &desc.text)])?;
        let text = self.ask(log, Stage::Passage, user)?;
        let text = text.trim();
        if text.is_empty() {
            return Err(SynthError::EmptyGeneration(Stage::Passage));
        }
        Ok(Passage {
            id: passage_id.into(),
            text: text.to_string(),
            role: match desc.polarity {
                Polarity::Positive => PassageRole::Positive,
                Polarity::Negative => PassageRole::HardNegative,
            },
            material_desc: Some(desc.text.clone()),
        })
    }

    /// Solves one expanded query and turns it into labeled pairs: positives
    /// first, then hard negatives, each in list order.
    pub fn pairs_for(
        &self,
        log: &mut CallLog,
        query: &Query,
    ) -> Result<Vec<LabeledPair>, (Stage, SynthError)> {
        let solution = self.solve_cot(log, query).map_err(|e| (Stage::Solve, e))?;
        let positives = self
            .extract_materials(log, &solution)
            .map_err(|e| (Stage::Extract, e))?;
        let negatives = self
            .gen_negative_descs(log, query, &positives)
            .map_err(|e| (Stage::Negatives, e))?;
        let mut pairs = Vec::with_capacity(positives.len() + negatives.len());
        for desc in positives.iter().chain(&negatives) {
            let tag = match desc.polarity {
                Polarity::Positive => "pos",
                Polarity::Negative => "neg",
            };
            let id = format!("{}-{}-{}", query.id, tag, desc.index);
            let passage = self
                .gen_passage(log, id, desc)
                .map_err(|e| (Stage::Passage, e))?;
            pairs.push(LabeledPair::new(
                query.clone(),
                passage,
                PairSource::Synthesized,
            ));
        }
        Ok(pairs)
    }

    fn run_seed(
        &self,
        log: &mut CallLog,
        seed: u64,
        index: usize,
        seed_query: &Query,
    ) -> Result<Vec<LabeledPair>, (Stage, SynthError)> {
        let samples = self
            .sample_personas(seed, index)
            .map_err(|e| (Stage::Persona, e))?;
        let persona = self
            .ground_persona(log, seed_query, &samples)
            .map_err(|e| (Stage::Persona, e))?;
        let daily = self
            .expand_daily(log, seed_query, &persona)
            .map_err(|e| (Stage::Daily, e))?;
        let expert = self
            .expand_expert(log, seed_query)
            .map_err(|e| (Stage::Expert, e))?;
        let mut pairs = self.pairs_for(log, &daily)?;
        pairs.extend(self.pairs_for(log, &expert)?);
        Ok(pairs)
    }

    /// Runs the whole pipeline. Seed queries are processed in parallel; the
    /// output is ordered by (seed index, expansion, material index) and the
    /// transcript by seed index, whatever the completion order. A failing
    /// seed is skipped and recorded in the report.
    pub fn synthesize(&self, seeds: &[Query], seed: u64) -> SynthOutput {
        let results: Vec<(CallLog, SeedResult)> = seeds
            .par_iter()
            .enumerate()
            .map(|(i, q)| {
                let mut log = CallLog::new();
                let r = self.run_seed(&mut log, seed, i, q);
                (log, r)
            })
            .collect();

        let mut out = SynthOutput::default();
        out.report.seeds_total = seeds.len();
        for ((log, result), q) in results.into_iter().zip(seeds) {
            out.transcript.extend(log.exchanges);
            match result {
                Ok(pairs) => {
                    out.report.seeds_succeeded += 1;
                    out.pairs.extend(pairs);
                }
                Err((stage, e)) => {
                    log::warn!("seed query `{}` failed at {stage}: {e}", q.id);
                    out.report.failures.push(StageFailure {
                        query_id: q.id.clone(),
                        stage,
                        message: e.to_string(),
                    });
                }
            }
        }
        out.report.pairs_emitted = out.pairs.len();
        out
    }
}
