//! Pipeline configuration file.
//!
//! One TOML file describes endpoints, stage bindings and every tunable. Paths
//! inside it are relative to the file's directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;
use thiserror::Error;

use synthrank::bm25::{Bm25Params, Tokenizer};
use synthrank::dataset::{AblationVariant, MixSpec, SftOptions};
use synthrank::gateway::{EndpointSpec, Gateway};
use synthrank::judge::JudgeSettings;
use synthrank::prompt::{PromptSet, Template, TemplateId};
use synthrank::rag::{RagConfig, RagPreset, ReaderSettings};
use synthrank::rerank::RerankSettings;
use synthrank::synth::{StageConfig, StageSettings};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("config must set `seed`")]
    MissingSeed,
    #[error("[{section}] refers to endpoint `{id}`, which is not defined under [endpoints]")]
    UnknownEndpoint { section: String, id: String },
    #[error("config has no [{0}] section, which this command needs")]
    MissingSection(&'static str),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    RetrieveOnly,
    #[default]
    Rerank,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "retrieve_only" => Ok(Mode::RetrieveOnly),
            "rerank" => Ok(Mode::Rerank),
            _ => Err(format!(
                "unknown mode `{s}` (expected retrieve_only or rerank)"
            )),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct StageOverride {
    endpoint: Option<String>,
    temperature: Option<f64>,
    max_tokens: Option<u32>,
    retries: Option<u32>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SynthSection {
    /// Default endpoint for every generation stage.
    endpoint: String,
    persona_pool: PathBuf,
    temperature: Option<f64>,
    max_tokens: Option<u32>,
    materials_min: Option<usize>,
    materials_max: Option<usize>,
    negatives_min: Option<usize>,
    negatives_max: Option<usize>,
    persona_samples: Option<usize>,
    min_solution_chars: Option<usize>,
    #[serde(default)]
    stages: BTreeMap<String, StageOverride>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct MixSection {
    seed_pool_count: usize,
    synth_count: usize,
    balance: bool,
    ablation: AblationVariant,
}

impl Default for MixSection {
    fn default() -> Self {
        let d = MixSpec::default();
        MixSection {
            seed_pool_count: d.seed_pool_count,
            synth_count: d.synth_count,
            balance: d.balance,
            ablation: AblationVariant::Full,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct Bm25Section {
    k1: Option<f64>,
    b: Option<f64>,
    stopwords: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateSection {
    pub mode: Mode,
    pub retrieve_k: usize,
    /// Cutoff of the headline nDCG.
    pub ndcg_k: usize,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        EvaluateSection {
            mode: Mode::Rerank,
            retrieve_k: 100,
            ndcg_k: 10,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RagSection {
    preset: Option<RagPreset>,
    mode: Mode,
    retrieve_k: Option<usize>,
    rerank_k: Option<usize>,
    context_k: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SftSection {
    pub base_model: String,
    pub system: Option<String>,
    pub require_traces: bool,
}

impl Default for SftSection {
    fn default() -> Self {
        SftSection {
            base_model: "Qwen/Qwen2.5-7B-Instruct".into(),
            system: None,
            require_traces: false,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    name: String,
    seed: Option<u64>,
    #[serde(default = "default_output_dir")]
    output_dir: PathBuf,
    #[serde(default)]
    endpoints: BTreeMap<String, EndpointSpec>,
    synth: Option<SynthSection>,
    judge: Option<JudgeSettings>,
    reranker: Option<RerankSettings>,
    reader: Option<ReaderSettings>,
    #[serde(default)]
    mix: MixSection,
    #[serde(default)]
    bm25: Bm25Section,
    #[serde(default)]
    evaluate: EvaluateSection,
    #[serde(default)]
    rag: RagSection,
    #[serde(default)]
    sft: SftSection,
    /// Template name to replacement file.
    #[serde(default)]
    prompts: BTreeMap<String, PathBuf>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

/// Synthesis settings with paths resolved.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub stages: StageConfig,
    pub persona_pool: PathBuf,
}

/// A validated configuration.
#[derive(Debug)]
pub struct PipelineConfig {
    pub name: String,
    pub seed: u64,
    pub base_dir: PathBuf,
    pub output_dir: PathBuf,
    pub endpoints: BTreeMap<String, EndpointSpec>,
    pub synth: Option<SynthConfig>,
    pub judge: Option<JudgeSettings>,
    pub reranker: Option<RerankSettings>,
    pub reader: Option<ReaderSettings>,
    pub mix: MixSpec,
    pub ablation: AblationVariant,
    pub bm25: Bm25Params,
    pub stopwords: Option<PathBuf>,
    pub evaluate: EvaluateSection,
    pub rag: RagConfig,
    pub rag_mode: Mode,
    pub sft: SftSection,
    pub prompts: PromptSet,
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

fn stage_name(stage: synthrank::Stage) -> String {
    stage.to_string()
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or_else(|| PathBuf::from("."));
        Self::parse(&text, &base_dir).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    /// Parses and validates; relative paths resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: PathBuf::new(),
            message: e.to_string(),
        })?;
        let seed = raw.seed.ok_or(ConfigError::MissingSeed)?;
        if raw.name.is_empty()
            || !raw
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
        {
            return Err(invalid(format!(
                "name `{}` must be non-empty and use only letters, digits, `-`, `_` or `.`",
                raw.name
            )));
        }
        let resolve = |p: &Path| base_dir.join(p);
        let check_endpoint = |section: &str, id: &str| -> Result<(), ConfigError> {
            if raw.endpoints.contains_key(id) {
                Ok(())
            } else {
                Err(ConfigError::UnknownEndpoint {
                    section: section.to_string(),
                    id: id.to_string(),
                })
            }
        };

        let synth = match raw.synth {
            None => None,
            Some(s) => {
                let mut stages = StageConfig::uniform(&s.endpoint);
                let known: Vec<String> = stages.endpoints().map(|(st, _)| stage_name(st)).collect();
                if let Some(bad) = s.stages.keys().find(|k| !known.contains(k)) {
                    return Err(invalid(format!(
                        "[synth.stages.{bad}] is not a synthesis stage (expected one of {})",
                        known.join(", ")
                    )));
                }
                let apply = |name: &str, st: &mut StageSettings| {
                    if let Some(t) = s.temperature {
                        st.temperature = t;
                    }
                    if let Some(m) = s.max_tokens {
                        st.max_tokens = m;
                    }
                    if let Some(o) = s.stages.get(name) {
                        if let Some(e) = &o.endpoint {
                            st.endpoint = e.clone();
                        }
                        if let Some(t) = o.temperature {
                            st.temperature = t;
                        }
                        if let Some(m) = o.max_tokens {
                            st.max_tokens = m;
                        }
                        if let Some(r) = o.retries {
                            st.retries = r;
                        }
                    }
                };
                apply("persona", &mut stages.persona);
                apply("daily", &mut stages.daily);
                apply("expert", &mut stages.expert);
                apply("solve", &mut stages.solve);
                apply("extract", &mut stages.extract);
                apply("negatives", &mut stages.negatives);
                apply("passage", &mut stages.passage);
                stages.materials_min = s.materials_min.unwrap_or(stages.materials_min);
                stages.materials_max = s.materials_max.unwrap_or(stages.materials_max);
                stages.negatives_min = s.negatives_min.unwrap_or(stages.negatives_min);
                stages.negatives_max = s.negatives_max.unwrap_or(stages.negatives_max);
                stages.persona_samples = s.persona_samples.unwrap_or(stages.persona_samples);
                stages.min_solution_chars =
                    s.min_solution_chars.unwrap_or(stages.min_solution_chars);
                stages
                    .validate()
                    .map_err(|e| invalid(format!("[synth]: {e}")))?;
                for (stage, id) in stages.endpoints() {
                    check_endpoint(&format!("synth.{stage}"), id)?;
                }
                Some(SynthConfig {
                    stages,
                    persona_pool: resolve(&s.persona_pool),
                })
            }
        };
        if let Some(j) = &raw.judge {
            check_endpoint("judge", &j.endpoint)?;
        }
        if let Some(r) = &raw.reranker {
            check_endpoint("reranker", &r.endpoint)?;
            if r.k_in == 0 {
                return Err(invalid("[reranker] k_in must be at least 1"));
            }
        }
        if let Some(r) = &raw.reader {
            check_endpoint("reader", &r.endpoint)?;
        }

        let bm25 = Bm25Params {
            k1: raw.bm25.k1.unwrap_or(Bm25Params::default().k1),
            b: raw.bm25.b.unwrap_or(Bm25Params::default().b),
        };
        bm25.validate()
            .map_err(|e| invalid(format!("[bm25]: {e}")))?;
        if raw.evaluate.retrieve_k == 0 || raw.evaluate.ndcg_k == 0 {
            return Err(invalid(
                "[evaluate] retrieve_k and ndcg_k must be at least 1",
            ));
        }

        let preset = raw.rag.preset.unwrap_or(RagPreset::Main);
        let reader = raw.reader.clone().unwrap_or_else(|| ReaderSettings::on(""));
        let mut rag = RagConfig::preset(preset, reader);
        rag.retrieve_k = raw.rag.retrieve_k.unwrap_or(rag.retrieve_k);
        rag.rerank_k = raw.rag.rerank_k.unwrap_or(rag.rerank_k);
        rag.context_k = raw.rag.context_k.unwrap_or(rag.context_k);
        rag.validate().map_err(|e| invalid(format!("[rag]: {e}")))?;

        let mut prompts = PromptSet::default();
        for (name, file) in &raw.prompts {
            let id = TemplateId::ALL
                .into_iter()
                .find(|t| t.name() == name)
                .ok_or_else(|| invalid(format!("[prompts] has unknown template `{name}`")))?;
            let t = Template::from_file(id, &resolve(file))
                .map_err(|e| invalid(format!("[prompts] {name}: {e}")))?;
            prompts = prompts.with(t);
        }

        Ok(PipelineConfig {
            name: raw.name,
            seed,
            output_dir: resolve(&raw.output_dir),
            base_dir: base_dir.to_path_buf(),
            endpoints: raw.endpoints,
            synth,
            judge: raw.judge,
            reranker: raw.reranker,
            reader: raw.reader,
            mix: MixSpec {
                seed_pool_count: raw.mix.seed_pool_count,
                synth_count: raw.mix.synth_count,
                balance: raw.mix.balance,
                rng_seed: seed,
            },
            ablation: raw.mix.ablation,
            bm25,
            stopwords: raw.bm25.stopwords.as_deref().map(resolve),
            evaluate: raw.evaluate,
            rag,
            rag_mode: raw.rag.mode,
            sft: raw.sft,
            prompts,
        })
    }

    /// Overrides the global seed everywhere it is used.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.mix.rng_seed = seed;
    }

    /// Directory for one command's outputs.
    pub fn run_dir(&self, command: &str) -> PathBuf {
        self.output_dir.join(&self.name).join(command)
    }

    pub fn tokenizer(&self) -> Result<Tokenizer, ConfigError> {
        match &self.stopwords {
            None => Ok(Tokenizer::default()),
            Some(p) => Tokenizer::from_stopword_file(p).map_err(|source| ConfigError::Read {
                path: p.clone(),
                source,
            }),
        }
    }

    /// Gateway holding only the listed endpoints, so credentials for unused
    /// endpoints are not required.
    pub fn gateway<'a>(
        &self,
        ids: impl IntoIterator<Item = &'a str>,
    ) -> Result<Gateway, ConfigError> {
        let specs: BTreeMap<String, EndpointSpec> = ids
            .into_iter()
            .filter_map(|id| self.endpoints.get_key_value(id))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        Gateway::from_specs(&specs, &self.base_dir).map_err(|e| invalid(e.to_string()))
    }

    pub fn synth(&self) -> Result<&SynthConfig, ConfigError> {
        self.synth
            .as_ref()
            .ok_or(ConfigError::MissingSection("synth"))
    }

    pub fn judge(&self) -> Result<&JudgeSettings, ConfigError> {
        self.judge
            .as_ref()
            .ok_or(ConfigError::MissingSection("judge"))
    }

    pub fn reranker(&self) -> Result<&RerankSettings, ConfigError> {
        self.reranker
            .as_ref()
            .ok_or(ConfigError::MissingSection("reranker"))
    }

    pub fn reader(&self) -> Result<&ReaderSettings, ConfigError> {
        self.reader
            .as_ref()
            .ok_or(ConfigError::MissingSection("reader"))
    }

    pub fn sft_options(&self) -> SftOptions {
        SftOptions {
            system: self.sft.system.clone(),
            require_traces: self.sft.require_traces,
        }
    }
}
