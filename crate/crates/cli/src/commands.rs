//! One function per subcommand. Each checks the config sections and inputs
//! it needs before writing anything.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use log::info;
use serde::Serialize;
use serde_json::json;

use synthrank::bm25::InvertedIndex;
use synthrank::corpus::{self, Document, LabeledPair, PairSource, Query, Ranking};
use synthrank::dataset::{self, AblationVariant, TrainManifest};
use synthrank::gateway::write_transcript;
use synthrank::judge::{filter_pairs, Judge};
use synthrank::metrics::{self, format_table, Metric, MetricReport};
use synthrank::rag::{McQuestion, RagHarness};
use synthrank::rerank::{DocStore, LlmReranker, PassThrough, Rerank};
use synthrank::synth::{Persona, Synthesizer};

use crate::config::{ConfigError, Mode, PipelineConfig};

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn fresh_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn read<T: corpus::JsonlRecord>(path: &Path, what: &str) -> Result<Vec<T>> {
    corpus::read_jsonl(path).with_context(|| format!("reading {what}"))
}

pub fn synthesize(cfg: &PipelineConfig, seeds_path: &Path) -> Result<()> {
    let synth_cfg = cfg.synth()?;
    let judge_cfg = cfg.judge()?;
    let seeds: Vec<Query> = read(seeds_path, "seed queries")?;
    let personas: Vec<Persona> = read(&synth_cfg.persona_pool, "persona pool")?;
    let ids = synth_cfg
        .stages
        .endpoints()
        .map(|(_, id)| id)
        .chain([judge_cfg.endpoint.as_str()]);
    let gateway = cfg.gateway(ids)?;

    let synthesizer = Synthesizer::new(&gateway, synth_cfg.stages.clone(), personas)
        .with_prompts(cfg.prompts.clone());
    let out = synthesizer.synthesize(&seeds, cfg.seed);
    info!(
        "synthesized {} pairs from {}/{} seed queries",
        out.pairs.len(),
        out.report.seeds_succeeded,
        out.report.seeds_total
    );
    let judge = Judge::new(&gateway, judge_cfg.clone()).with_prompts(cfg.prompts.clone());
    let (verdicts, judge_transcript) = judge.judge_all(&out.pairs);
    let (kept, report) = filter_pairs(&out.pairs, &verdicts)?;

    let dir = cfg.run_dir("synthesize");
    fresh_dir(&dir)?;
    corpus::write_jsonl(&out.pairs, dir.join("synthesized.jsonl"))?;
    corpus::write_jsonl(&verdicts, dir.join("verdicts.jsonl"))?;
    corpus::write_jsonl(&kept, dir.join("pairs.jsonl"))?;
    write_json(&dir.join("filter_report.json"), &report)?;
    write_json(&dir.join("synth_report.json"), &out.report)?;
    let mut transcript = out.transcript;
    transcript.extend(judge_transcript);
    write_transcript(&transcript, &dir.join("transcript.jsonl"))?;

    print!("{}", report.table());
    println!(
        "seed queries: {}/{} succeeded",
        out.report.seeds_succeeded, out.report.seeds_total
    );
    println!("outputs in {}", dir.display());
    Ok(())
}

#[derive(Serialize)]
struct PoolCounts {
    total: usize,
    positives: usize,
    negatives: usize,
}

impl PoolCounts {
    fn of<'a>(pairs: impl Iterator<Item = &'a LabeledPair>) -> Self {
        let (mut positives, mut negatives) = (0, 0);
        for p in pairs {
            if p.intended_label {
                positives += 1;
            } else {
                negatives += 1;
            }
        }
        PoolCounts {
            total: positives + negatives,
            positives,
            negatives,
        }
    }
}

pub fn build(
    cfg: &PipelineConfig,
    seed_pool_path: &Path,
    synth_path: &Path,
    ablation: AblationVariant,
) -> Result<()> {
    let seed_pool: Vec<LabeledPair> = read(seed_pool_path, "seed pool")?;
    let synth_pool: Vec<LabeledPair> = read(synth_path, "synthesized pairs")?;
    let synth_pool = dataset::ablation_split(&synth_pool, ablation);
    let mix = dataset::build_training_set(&seed_pool, &synth_pool, &cfg.mix)?;

    let dir = cfg.run_dir("build").join(ablation.name());
    fresh_dir(&dir)?;
    let sft_path = std::path::absolute(dir.join("sft.jsonl"))?;
    dataset::emit_sft_records(&mix, &sft_path, &cfg.prompts, &cfg.sft_options())?;
    let manifest = TrainManifest::new(cfg.sft.base_model.clone(), sft_path.display().to_string());
    fs::write(dir.join("manifest.txt"), manifest.to_string())?;
    let report = json!({
        "ablation": ablation.name(),
        "rng_seed": cfg.mix.rng_seed,
        "records": mix.len(),
        "seed_pool": PoolCounts::of(mix.iter().filter(|p| p.source == PairSource::SeedPool)),
        "synthesized": PoolCounts::of(mix.iter().filter(|p| p.source == PairSource::Synthesized)),
    });
    write_json(&dir.join("build_report.json"), &report)?;
    println!(
        "{} SFT records ({}) written to {}",
        mix.len(),
        ablation,
        sft_path.display()
    );
    Ok(())
}

fn build_index(cfg: &PipelineConfig, docs: &[Document]) -> Result<InvertedIndex> {
    Ok(InvertedIndex::build(docs, cfg.bm25, cfg.tokenizer()?)?)
}

pub fn index(cfg: &PipelineConfig, corpus_path: &Path) -> Result<()> {
    let docs: Vec<Document> = read(corpus_path, "corpus")?;
    let index = build_index(cfg, &docs)?;
    let dir = cfg.run_dir("index");
    fresh_dir(&dir)?;
    index.save(&dir.join("index.bin"))?;
    let stats = json!({
        "doc_count": index.doc_count(),
        "avg_doc_len": index.avg_doc_len(),
        "vocabulary": index.vocabulary_size(),
        "k1": index.params().k1,
        "b": index.params().b,
    });
    write_json(&dir.join("stats.json"), &stats)?;
    println!(
        "indexed {} documents ({} terms) into {}",
        index.doc_count(),
        index.vocabulary_size(),
        dir.join("index.bin").display()
    );
    Ok(())
}

pub struct EvalInputs {
    pub corpus: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub qrels: PathBuf,
    pub index: Option<PathBuf>,
    pub mode: Mode,
    /// (original-instruction run, modified-instruction run)
    pub paired: Option<(PathBuf, PathBuf)>,
}

fn standard_metrics(ndcg_k: usize) -> Vec<Metric> {
    let mut m = vec![Metric::Ndcg(ndcg_k)];
    for extra in [
        Metric::Ndcg(5),
        Metric::Map(5),
        Metric::Recall(5),
        Metric::Mrr,
    ] {
        if !m.contains(&extra) {
            m.push(extra);
        }
    }
    m
}

fn score_run(run: &[Ranking], qrels: &corpus::QRels, ms: &[Metric]) -> Result<Vec<MetricReport>> {
    ms.iter()
        .map(|m| metrics::evaluate(run, qrels, *m).map_err(Into::into))
        .collect()
}

pub fn evaluate(cfg: &PipelineConfig, inputs: &EvalInputs) -> Result<()> {
    let retrieving = inputs.corpus.is_some() || inputs.queries.is_some() || inputs.index.is_some();
    if retrieving && inputs.queries.is_none() {
        return Err(ConfigError::Invalid("--queries is required to retrieve".into()).into());
    }
    if retrieving && inputs.corpus.is_none() {
        return Err(ConfigError::Invalid(
            "--corpus is required to retrieve (it supplies passage text)".into(),
        )
        .into());
    }
    if !retrieving && inputs.paired.is_none() {
        return Err(ConfigError::Invalid(
            "give --corpus and --queries, or --og-run and --new-run".into(),
        )
        .into());
    }
    let reranker_cfg = match (retrieving, inputs.mode) {
        (true, Mode::Rerank) => Some(cfg.reranker()?),
        _ => None,
    };
    let qrels = corpus::read_qrels(&inputs.qrels).context("reading qrels")?;
    let ms = standard_metrics(cfg.evaluate.ndcg_k);
    let dir = cfg.run_dir("evaluate");
    let mut summary = serde_json::Map::new();
    let mut text = String::new();

    if let (Some(corpus_path), Some(queries_path)) = (&inputs.corpus, &inputs.queries) {
        let docs: Vec<Document> = read(corpus_path, "corpus")?;
        let queries: Vec<Query> = read(queries_path, "queries")?;
        let index = match &inputs.index {
            Some(p) => {
                InvertedIndex::load(p).with_context(|| format!("loading index {}", p.display()))?
            }
            None => build_index(cfg, &docs)?,
        };
        let gateway = match reranker_cfg {
            Some(r) => Some(cfg.gateway([r.endpoint.as_str()])?),
            None => None,
        };
        let store = DocStore::new(&docs);
        let baseline: Vec<Ranking> = queries
            .iter()
            .map(|q| index.retrieve(q, cfg.evaluate.retrieve_k))
            .collect();
        fresh_dir(&dir)?;
        corpus::write_run(&baseline, dir.join("bm25.trec"))?;
        let baseline_reports = score_run(&baseline, &qrels, &ms)?;

        let final_run = match (&gateway, reranker_cfg) {
            (Some(gw), Some(settings)) => {
                let reranker =
                    LlmReranker::new(gw, settings.clone()).with_prompts(cfg.prompts.clone());
                let mut run = Vec::with_capacity(queries.len());
                let mut traces = Vec::new();
                let (mut failures, mut unscored) = (0, 0);
                for (q, cands) in queries.iter().zip(&baseline) {
                    let out = reranker.rerank(q, cands, &store);
                    failures += out.failures;
                    unscored += out.unscored;
                    traces.extend(out.traces);
                    run.push(out.ranking);
                }
                corpus::write_jsonl(&traces, dir.join("rerank_traces.jsonl"))?;
                corpus::write_run(&run, dir.join("run.trec"))?;
                summary.insert(
                    "rerank".into(),
                    json!({"tag": reranker.tag(), "failures": failures, "unscored": unscored}),
                );
                summary.insert("baseline".into(), serde_json::to_value(&baseline_reports)?);
                text.push_str("BM25 baseline\n");
                text.push_str(&format_table(&baseline_reports));
                text.push_str(&format!(
                    "\nreranked ({}; {failures} failed, {unscored} unscored)\n",
                    reranker.tag()
                ));
                run
            }
            _ => {
                corpus::write_run(&baseline, dir.join("run.trec"))?;
                text.push_str("BM25\n");
                baseline
            }
        };
        let reports = score_run(&final_run, &qrels, &ms)?;
        text.push_str(&format_table(&reports));
        summary.insert("run".into(), serde_json::to_value(&reports)?);
    }

    if let Some((og_path, new_path)) = &inputs.paired {
        let og = corpus::read_run(og_path).context("reading --og-run")?;
        let new = corpus::read_run(new_path).context("reading --new-run")?;
        let p = metrics::p_mrr(&og, &new, &qrels)?;
        let mut reports = score_run(&new, &qrels, &[Metric::Map(5), Metric::Ndcg(5)])?;
        reports.push(p);
        fresh_dir(&dir)?;
        text.push_str(
            "\npaired instruction runs (metrics on the modified run; p-MRR in percent)\n",
        );
        text.push_str(&format_table(&reports));
        summary.insert("paired".into(), serde_json::to_value(&reports)?);
    }

    write_json(&dir.join("metrics.json"), &summary)?;
    fs::write(dir.join("metrics.txt"), &text)?;
    print!("{text}");
    Ok(())
}

pub fn rag(
    cfg: &PipelineConfig,
    corpus_path: &Path,
    questions_path: &Path,
    mode: Mode,
) -> Result<()> {
    let reader = cfg.reader()?;
    let reranker_cfg = match mode {
        Mode::Rerank => Some(cfg.reranker()?),
        Mode::RetrieveOnly => None,
    };
    let docs: Vec<Document> = read(corpus_path, "corpus")?;
    let questions: Vec<McQuestion> = read(questions_path, "questions")?;
    let mut ids = vec![reader.endpoint.as_str()];
    if let Some(r) = reranker_cfg {
        ids.push(r.endpoint.as_str());
    }
    let gateway = cfg.gateway(ids)?;
    let index = build_index(cfg, &docs)?;
    let store = DocStore::new(&docs);
    let llm;
    let reranker: &dyn Rerank = match reranker_cfg {
        Some(settings) => {
            llm = LlmReranker::new(&gateway, settings.clone()).with_prompts(cfg.prompts.clone());
            &llm
        }
        None => &PassThrough,
    };
    let harness = RagHarness {
        gateway: &gateway,
        index: &index,
        docs: &store,
        reranker,
        config: cfg.rag.clone(),
        prompts: cfg.prompts.clone(),
    };
    let report = harness.evaluate(&questions)?;

    let dir = cfg.run_dir("rag");
    fresh_dir(&dir)?;
    corpus::write_jsonl(&report.answers, dir.join("results.jsonl"))?;
    let summary = json!({
        "mode": match mode { Mode::Rerank => "rerank", Mode::RetrieveOnly => "retrieve_only" },
        "retrieve_k": cfg.rag.retrieve_k,
        "rerank_k": cfg.rag.rerank_k,
        "context_k": cfg.rag.context_k,
        "summary": report.summary,
    });
    write_json(&dir.join("summary.json"), &summary)?;
    write_transcript(&report.transcript, &dir.join("transcript.jsonl"))?;
    println!("{}", report.summary);
    Ok(())
}
