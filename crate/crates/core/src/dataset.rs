//! Training-mix assembly, SFT export and ablation variants.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use log::warn;
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{self, CorpusError, JsonlRecord, LabeledPair, PairSource, QueryKind};
use crate::judge::judge_prompt;
use crate::prompt::{PromptSet, TemplateError};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{pool} pool has {have} usable pairs, {want} requested")]
    PoolTooSmall {
        pool: &'static str,
        have: usize,
        want: usize,
    },
    #[error("pair `{0}` has no reasoning trace")]
    MissingTrace(String),
    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixSpec {
    pub seed_pool_count: usize,
    pub synth_count: usize,
    pub balance: bool,
    pub rng_seed: u64,
}

impl Default for MixSpec {
    fn default() -> Self {
        MixSpec {
            seed_pool_count: 14_000,
            synth_count: 6_000,
            balance: true,
            rng_seed: 0,
        }
    }
}

fn pick<T: Clone>(items: &[T], n: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
    let mut idx = sample(rng, items.len(), n).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| items[i].clone()).collect()
}

fn split_labels(pairs: &[LabeledPair]) -> (Vec<LabeledPair>, Vec<LabeledPair>) {
    pairs.iter().cloned().partition(|p| p.intended_label)
}

/// Downsamples the majority label to the minority count. Survivors keep
/// their input order. Input with only one label comes back unchanged.
pub fn balance(pairs: &[LabeledPair], rng_seed: u64) -> Vec<LabeledPair> {
    let (pos, neg) = split_labels(pairs);
    if pos.is_empty() || neg.is_empty() {
        if !pairs.is_empty() {
            warn!(
                "cannot balance {} pairs that all share one label",
                pairs.len()
            );
        }
        return pairs.to_vec();
    }
    let m = pos.len().min(neg.len());
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let majority_true = pos.len() > neg.len();
    let major_len = pos.len().max(neg.len());
    let chosen: HashSet<usize> = sample(&mut rng, major_len, m).into_iter().collect();
    let mut seen_major = 0usize;
    pairs
        .iter()
        .filter(|p| {
            if p.intended_label != majority_true {
                return true;
            }
            seen_major += 1;
            chosen.contains(&(seen_major - 1))
        })
        .cloned()
        .collect()
}

fn dedup(pool: &[LabeledPair], name: &str) -> Vec<LabeledPair> {
    let mut seen = HashSet::new();
    let out: Vec<_> = pool
        .iter()
        .filter(|p| seen.insert((p.query.prompt_text(), p.passage.text.clone())))
        .cloned()
        .collect();
    if out.len() < pool.len() {
        warn!(
            "dropped {} exact duplicates from the {name} pool",
            pool.len() - out.len()
        );
    }
    out
}

fn sample_pool(
    pool: &[LabeledPair],
    want: usize,
    name: &'static str,
    balanced: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<LabeledPair>, DatasetError> {
    let pool = dedup(pool, name);
    if !balanced {
        if pool.len() < want {
            return Err(DatasetError::PoolTooSmall {
                pool: name,
                have: pool.len(),
                want,
            });
        }
        return Ok(pick(&pool, want, rng));
    }
    // Sampling each label separately from the minority-sized classes is the
    // same as balancing first and then drawing a label-balanced sample.
    let (pos, neg) = split_labels(&pool);
    let minority = pos.len().min(neg.len());
    if want > 2 * minority {
        return Err(DatasetError::PoolTooSmall {
            pool: name,
            have: 2 * minority,
            want,
        });
    }
    let mut out = pick(&pos, want.div_ceil(2), rng);
    out.extend(pick(&neg, want / 2, rng));
    Ok(out)
}

/// Seeded draw of the requested counts from both pools, concatenated and
/// shuffled.
pub fn build_training_set(
    seed_pool: &[LabeledPair],
    synth_pool: &[LabeledPair],
    spec: &MixSpec,
) -> Result<Vec<LabeledPair>, DatasetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    rng.set_stream(1);
    let mut out = sample_pool(
        seed_pool,
        spec.seed_pool_count,
        "seed_pool",
        spec.balance,
        &mut rng,
    )?;
    rng.set_stream(2);
    out.extend(sample_pool(
        synth_pool,
        spec.synth_count,
        "synthesized",
        spec.balance,
        &mut rng,
    )?);
    rng.set_stream(3);
    out.shuffle(&mut rng);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftRecord {
    pub messages: Vec<SftMessage>,
    pub query_id: String,
    pub passage_id: String,
    pub label: bool,
    pub source: PairSource,
    pub kind: QueryKind,
}

impl JsonlRecord for SftRecord {
    const REQUIRED: &'static [&'static str] = &["messages", "label"];

    fn validate(&self) -> Result<(), String> {
        match self.messages.last() {
            Some(m) if m.role == "assistant" => Ok(()),
            _ => Err("last message must come from the assistant".into()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SftOptions {
    pub system: Option<String>,
    /// Reject pairs that carry no reasoning trace.
    pub require_traces: bool,
}

/// Assistant target: optional trace in think tags, then the label word.
pub fn assistant_target(trace: Option<&str>, label: bool) -> String {
    match trace {
        Some(t) => format!("<think>{t}</think>{label}"),
        None => label.to_string(),
    }
}

pub fn sft_record(
    pair: &LabeledPair,
    prompts: &PromptSet,
    opts: &SftOptions,
) -> Result<SftRecord, DatasetError> {
    if opts.require_traces && pair.reasoning_trace.is_none() {
        return Err(DatasetError::MissingTrace(pair.id().to_string()));
    }
    let mut messages = Vec::with_capacity(3);
    if let Some(system) = &opts.system {
        messages.push(SftMessage {
            role: "system".into(),
            content: system.clone(),
        });
    }
    messages.push(SftMessage {
        role: "user".into(),
        content: judge_prompt(prompts, &pair.query, &pair.passage.text)?,
    });
    messages.push(SftMessage {
        role: "assistant".into(),
        content: assistant_target(pair.reasoning_trace.as_deref(), pair.intended_label),
    });
    Ok(SftRecord {
        messages,
        query_id: pair.query.id.clone(),
        passage_id: pair.passage.id.clone(),
        label: pair.intended_label,
        source: pair.source,
        kind: pair.query.kind,
    })
}

pub fn emit_sft_records(
    pairs: &[LabeledPair],
    path: impl AsRef<Path>,
    prompts: &PromptSet,
    opts: &SftOptions,
) -> Result<Vec<SftRecord>, DatasetError> {
    let records = pairs
        .iter()
        .map(|p| sft_record(p, prompts, opts))
        .collect::<Result<Vec<_>, _>>()?;
    corpus::write_jsonl(&records, path)?;
    Ok(records)
}

/// Settings handed to an external LoRA trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainManifest {
    pub lora_rank: u32,
    pub lora_alpha: u32,
    pub learning_rate: f64,
    pub batch_size: u32,
    pub epochs: u32,
    pub base_model: String,
    pub dataset_path: String,
}

impl TrainManifest {
    pub fn new(base_model: impl Into<String>, dataset_path: impl Into<String>) -> Self {
        TrainManifest {
            lora_rank: 32,
            lora_alpha: 64,
            learning_rate: 6e-5,
            batch_size: 128,
            epochs: 5,
            base_model: base_model.into(),
            dataset_path: dataset_path.into(),
        }
    }
}

impl fmt::Display for TrainManifest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "lora_rank={}", self.lora_rank)?;
        writeln!(f, "lora_alpha={}", self.lora_alpha)?;
        writeln!(f, "learning_rate={:e}", self.learning_rate)?;
        writeln!(f, "batch_size={}", self.batch_size)?;
        writeln!(f, "epochs={}", self.epochs)?;
        writeln!(f, "base_model={}", self.base_model)?;
        writeln!(f, "dataset_path={}", self.dataset_path)
    }
}

impl FromStr for TrainManifest {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut m = TrainManifest::new("", "");
        let mut seen = HashSet::new();
        for (i, line) in s.lines().enumerate() {
            let line_no = i + 1;
            let bad = |reason: String| DatasetError::Manifest {
                line: line_no,
                reason,
            };
            if line.trim().is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad("expected key=value".into()))?;
            let num = |v: &str| v.parse::<u32>().map_err(|e| bad(format!("{key}: {e}")));
            match key {
                "lora_rank" => m.lora_rank = num(value)?,
                "lora_alpha" => m.lora_alpha = num(value)?,
                "learning_rate" => {
                    m.learning_rate = value.parse().map_err(|e| bad(format!("{key}: {e}")))?
                }
                "batch_size" => m.batch_size = num(value)?,
                "epochs" => m.epochs = num(value)?,
                "base_model" => m.base_model = value.to_string(),
                "dataset_path" => m.dataset_path = value.to_string(),
                _ => return Err(bad(format!("unknown key `{key}`"))),
            }
            if !seen.insert(key.to_string()) {
                return Err(bad(format!("duplicate key `{key}`")));
            }
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    #[default]
    Full,
    DailyOnly,
    ExpertOnly,
    ShortTrace,
    LongTrace,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 5] = [
        AblationVariant::Full,
        AblationVariant::DailyOnly,
        AblationVariant::ExpertOnly,
        AblationVariant::ShortTrace,
        AblationVariant::LongTrace,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationVariant::Full => "full",
            AblationVariant::DailyOnly => "daily_only",
            AblationVariant::ExpertOnly => "expert_only",
            AblationVariant::ShortTrace => "short_trace",
            AblationVariant::LongTrace => "long_trace",
        }
    }
}

impl fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown ablation variant `{s}`"))
    }
}

/// Whitespace-token length of a pair's trace; no trace counts as zero.
pub fn trace_tokens(pair: &LabeledPair) -> usize {
    pair.reasoning_trace
        .as_deref()
        .map_or(0, |t| t.split_whitespace().count())
}

/// Median trace length over the synthesized pairs, `None` if there are none.
pub fn trace_median(pairs: &[LabeledPair]) -> Option<f64> {
    let mut lens: Vec<usize> = pairs
        .iter()
        .filter(|p| p.source == PairSource::Synthesized)
        .map(trace_tokens)
        .collect();
    if lens.is_empty() {
        return None;
    }
    lens.sort_unstable();
    let mid = lens.len() / 2;
    Some(if lens.len() % 2 == 1 {
        lens[mid] as f64
    } else {
        (lens[mid - 1] + lens[mid]) as f64 / 2.0
    })
}

/// Filters the synthesized pairs for an ablation variant. Seed-pool pairs
/// always pass through.
pub fn ablation_split(pairs: &[LabeledPair], variant: AblationVariant) -> Vec<LabeledPair> {
    let median = trace_median(pairs).unwrap_or(0.0);
    pairs
        .iter()
        .filter(|p| {
            p.source == PairSource::SeedPool
                || match variant {
                    AblationVariant::Full => true,
                    AblationVariant::DailyOnly => p.query.kind == QueryKind::Daily,
                    AblationVariant::ExpertOnly => p.query.kind == QueryKind::Expert,
                    AblationVariant::ShortTrace => trace_tokens(p) as f64 <= median,
                    AblationVariant::LongTrace => trace_tokens(p) as f64 > median,
                }
        })
        .cloned()
        .collect()
}
