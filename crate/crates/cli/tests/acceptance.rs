//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails or overruns its time budget.

mod common;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use synthrank::bm25::{build_index, tokenize, Bm25Params};
use synthrank::corpus::{
    read_jsonl, read_qrels, read_run, write_jsonl, write_qrels, write_run, Document, JsonlRecord,
    LabeledPair, PairSource, QRels, Query, QueryKind, RankedDoc, Ranking,
};
use synthrank::dataset::{ablation_split, AblationVariant, SftRecord};
use synthrank::gateway::{split_reasoning, Gateway, ScriptEntry, Stage};
use synthrank::judge::parse_verdict;
use synthrank::metrics::{map_at_k, mrr, ndcg_at_k, p_mrr, paired_delta, recall_at_k};
use synthrank::rag::McQuestion;
use synthrank::rerank::{DocStore, LlmReranker, Rerank, RerankSettings};
use synthrank::synth::Persona;
use synthrank::testkit::{self, marker};

type Check = Result<(), String>;

/// Number, name, time budget, check.
type Criterion = (u32, &'static str, Duration, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

fn cli(config: &Path, args: &[&str]) -> anyhow::Result<()> {
    let mut argv = vec!["synthrank", "--config", config.to_str().unwrap()];
    argv.extend_from_slice(args);
    synthrank_cli::run_args(argv)
}

// ---- 1. metric oracle -------------------------------------------------------

mod reference {
    //! Straight-from-the-definition metrics over plain vectors.

    pub fn ndcg(ranked: &[&str], grades: &[(&str, u32)], k: usize) -> f64 {
        let g = |d: &str| grades.iter().find(|(x, _)| *x == d).map_or(0, |(_, g)| *g) as f64;
        let mut dcg = 0.0;
        for (i, d) in ranked.iter().take(k).enumerate() {
            dcg += g(d) / (2.0 + i as f64).log2();
        }
        let mut ideal: Vec<f64> = grades.iter().map(|(_, g)| *g as f64).collect();
        ideal.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let mut idcg = 0.0;
        for (i, g) in ideal.iter().take(k).enumerate() {
            idcg += g / (2.0 + i as f64).log2();
        }
        if idcg > 0.0 {
            dcg / idcg
        } else {
            0.0
        }
    }

    fn relevant<'a>(grades: &'a [(&'a str, u32)]) -> Vec<&'a str> {
        grades
            .iter()
            .filter(|(_, g)| *g > 0)
            .map(|(d, _)| *d)
            .collect()
    }

    pub fn ap(ranked: &[&str], grades: &[(&str, u32)], k: usize) -> f64 {
        let rel = relevant(grades);
        if rel.is_empty() {
            return 0.0;
        }
        let top = &ranked[..k.min(ranked.len())];
        let mut total = 0.0;
        for (i, d) in top.iter().enumerate() {
            if rel.contains(d) {
                let hits_so_far = top[..=i].iter().filter(|x| rel.contains(x)).count();
                total += hits_so_far as f64 / (i + 1) as f64;
            }
        }
        total / rel.len().min(k) as f64
    }

    pub fn recall(ranked: &[&str], grades: &[(&str, u32)], k: usize) -> f64 {
        let rel = relevant(grades);
        if rel.is_empty() {
            return 0.0;
        }
        let top = &ranked[..k.min(ranked.len())];
        rel.iter().filter(|d| top.contains(d)).count() as f64 / rel.len() as f64
    }

    pub fn rr(ranked: &[&str], grades: &[(&str, u32)]) -> f64 {
        let rel = relevant(grades);
        for (i, d) in ranked.iter().enumerate() {
            if rel.contains(d) {
                return 1.0 / (i + 1) as f64;
            }
        }
        0.0
    }
}

fn random_ranking(rng: &mut ChaCha8Rng, qid: &str, pool: &[String], max_len: usize) -> Ranking {
    let mut ids: Vec<&String> = pool.iter().collect();
    ids.shuffle(rng);
    let n = rng.random_range(1..=max_len.min(ids.len()));
    let entries = ids[..n]
        .iter()
        .enumerate()
        .map(|(i, d)| RankedDoc::new(d.as_str(), (n - i) as f64))
        .collect();
    Ranking::from_ordered(qid, entries, "t").unwrap()
}

fn c1_metric_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pool: Vec<String> = (0..12).map(|i| format!("d{i}")).collect();
    let mut compared = 0;
    for case in 0..1500 {
        let ranking = random_ranking(&mut rng, "q", &pool, 8);
        let mut qrels = QRels::new();
        let mut grades: Vec<(&str, u32)> = Vec::new();
        for d in &pool {
            if rng.random_bool(0.5) {
                let g = rng.random_range(0..=2);
                qrels.insert("q", d.as_str(), g).unwrap();
                grades.push((d.as_str(), g));
            }
        }
        let ranked: Vec<&str> = ranking.doc_ids().collect();
        for k in [1, 3, 5, 10] {
            let pairs = [
                (
                    "nDCG",
                    ndcg_at_k(&ranking, &qrels, k),
                    reference::ndcg(&ranked, &grades, k),
                ),
                (
                    "MAP",
                    map_at_k(&ranking, &qrels, k),
                    reference::ap(&ranked, &grades, k),
                ),
                (
                    "Recall",
                    recall_at_k(&ranking, &qrels, k),
                    reference::recall(&ranked, &grades, k),
                ),
                (
                    "MRR",
                    mrr(&ranking, &qrels),
                    reference::rr(&ranked, &grades),
                ),
            ];
            for (name, got, want) in pairs {
                ensure!(
                    (got - want).abs() <= 1e-9,
                    "case {case} {name}@{k}: {got} vs reference {want}"
                );
                compared += 1;
            }
        }
    }
    ensure!(compared >= 4000, "only {compared} comparisons");
    Ok(())
}

// ---- 2. p-MRR ---------------------------------------------------------------

fn c2_pmrr() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pool: Vec<String> = (0..15).map(|i| format!("d{i}")).collect();
    for case in 0..100 {
        let mut qrels = QRels::new();
        let (mut og, mut new) = (Vec::new(), Vec::new());
        for q in 0..5 {
            let qid = format!("q{q}");
            for d in pool.choose_multiple(&mut rng, 3) {
                qrels
                    .insert(&qid, d.as_str(), rng.random_range(1..=2))
                    .unwrap();
            }
            og.push(random_ranking(&mut rng, &qid, &pool, 10));
            new.push(random_ranking(&mut rng, &qid, &pool, 10));
        }
        let same = p_mrr(&og, &og, &qrels).map_err(|e| e.to_string())?;
        ensure!(same.mean == 0.0, "case {case}: p_mrr(r, r) = {}", same.mean);
        let fwd = p_mrr(&og, &new, &qrels).map_err(|e| e.to_string())?;
        let back = p_mrr(&new, &og, &qrels).map_err(|e| e.to_string())?;
        ensure!(
            (fwd.mean + back.mean).abs() <= 1e-9,
            "case {case}: {} vs {}",
            fwd.mean,
            back.mean
        );
        for (q, v) in &fwd.per_query {
            ensure!(
                (v + back.per_query[q]).abs() <= 1e-9,
                "case {case} query {q} not antisymmetric"
            );
        }
    }
    let mut qrels = QRels::new();
    qrels.insert("q", "a", 1).unwrap();
    let og = Ranking::from_ordered(
        "q",
        vec![RankedDoc::new("b", 2.0), RankedDoc::new("a", 1.0)],
        "og",
    )
    .unwrap();
    let new = Ranking::from_ordered(
        "q",
        vec![RankedDoc::new("a", 2.0), RankedDoc::new("b", 1.0)],
        "new",
    )
    .unwrap();
    let v = p_mrr(&[og], &[new], &qrels)
        .map_err(|e| e.to_string())?
        .mean;
    ensure!(
        (v - 100.0).abs() <= 1e-9,
        "rank 2 -> 1 gives {v}, expected +100"
    );
    ensure!(
        paired_delta(2, 1) == 1.0 && paired_delta(1, 2) == -1.0,
        "paired_delta formula"
    );
    Ok(())
}

// ---- 3. BM25 ----------------------------------------------------------------

fn brute_bm25(docs: &[Vec<String>], query: &[String], k1: f64, b: f64) -> Vec<f64> {
    let n = docs.len() as f64;
    let avgdl = docs.iter().map(Vec::len).sum::<usize>() as f64 / n;
    let mut unique: Vec<&String> = Vec::new();
    for t in query {
        if !unique.contains(&t) {
            unique.push(t);
        }
    }
    docs.iter()
        .map(|doc| {
            let dl = doc.len() as f64;
            unique
                .iter()
                .map(|t| {
                    let df = docs.iter().filter(|d| d.contains(t)).count() as f64;
                    let tf = doc.iter().filter(|x| x == t).count() as f64;
                    let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
                    idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * dl / avgdl))
                })
                .sum()
        })
        .collect()
}

fn c3_bm25() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let vocab = [
        "apple", "river", "stone", "light", "cloud", "tree", "salt", "wind", "fire", "glass",
    ];
    for case in 0..200 {
        let n = rng.random_range(1..=20);
        let docs: Vec<Document> = (0..n)
            .map(|i| {
                let len = rng.random_range(0..12);
                let words: Vec<&str> = (0..len).map(|_| *vocab.choose(&mut rng).unwrap()).collect();
                Document {
                    id: format!("doc{i:02}"),
                    text: words.join(" "),
                }
            })
            .collect();
        if docs.iter().all(|d| d.text.is_empty()) {
            continue;
        }
        let qlen = rng.random_range(1..=6);
        let qtext: Vec<&str> = (0..qlen)
            .map(|_| *vocab.choose(&mut rng).unwrap())
            .collect();
        let query = Query::seed("q", qtext.join(" "));
        let params = Bm25Params {
            k1: rng.random_range(0.5..2.0),
            b: rng.random_range(0.0..=1.0),
        };
        let index = build_index(&docs, params).map_err(|e| e.to_string())?;
        let ranking = index.retrieve(&query, n);
        ensure!(
            ranking.len() == n,
            "case {case}: retrieved {} of {n}",
            ranking.len()
        );

        let tokens: Vec<Vec<String>> = docs.iter().map(|d| tokenize(&d.text)).collect();
        let want = brute_bm25(&tokens, &tokenize(&query.text), params.k1, params.b);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            want[b]
                .total_cmp(&want[a])
                .then(docs[a].id.cmp(&docs[b].id))
        });
        for (pos, (got, &exp)) in ranking.entries().iter().zip(&order).enumerate() {
            let truth = want[docs.iter().position(|d| d.id == got.doc_id).unwrap()];
            ensure!(
                (got.score - truth).abs() <= 1e-9,
                "case {case}: score of {} is {} not {truth}",
                got.doc_id,
                got.score
            );
            if got.doc_id != docs[exp].id {
                ensure!(
                    (want[exp] - truth).abs() <= 1e-9,
                    "case {case} rank {}: {} vs brute-force {}",
                    pos + 1,
                    got.doc_id,
                    docs[exp].id
                );
            }
        }
    }
    let docs = vec![
        Document {
            id: "d0".into(),
            text: "a b".into(),
        },
        Document {
            id: "d1".into(),
            text: "a".into(),
        },
    ];
    let index = build_index(&docs, Bm25Params::default()).map_err(|e| e.to_string())?;
    // "b" occurs once in d0 (length 2); N = 2, df = 1, avgdl = 1.5
    let (n, df, tf, dl, avgdl, k1, b) = (2.0, 1.0, 1.0, 2.0, 1.5, 1.5, 0.75);
    let direct = ((n - df + 0.5) / (df + 0.5) + 1.0f64).ln() * tf * (k1 + 1.0)
        / (tf + k1 * (1.0 - b + b * dl / avgdl));
    let got = index
        .score(&["b".to_string()], "d0")
        .map_err(|e| e.to_string())?;
    ensure!(
        (got - direct).abs() <= 1e-6,
        "two-doc example: {got} vs {direct}"
    );
    Ok(())
}

// ---- 4. reranker contracts --------------------------------------------------

fn level_logprobs(level: u32) -> [(&'static str, f64); 2] {
    match level {
        2 => [("true", -0.05), ("false", -3.0)],
        1 => [("true", -0.69), ("false", -0.70)],
        _ => [("true", -3.0), ("false", -0.05)],
    }
}

fn c4_reranker() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..200 {
        let n = rng.random_range(1..=15);
        let levels: Vec<u32> = (0..n).map(|_| rng.random_range(0..=2)).collect();
        let docs: Vec<Document> = (0..n)
            .map(|i| Document {
                id: format!("x{i:02}"),
                text: format!("{} candidate body", marker(&format!("x{i:02}"))),
            })
            .collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut gw = Gateway::new();
        let script: Vec<ScriptEntry> = (0..n)
            .map(|i| {
                ScriptEntry::new(
                    Stage::Rerank,
                    format!("Passage: {}", marker(&docs[i].id)),
                    "x",
                )
                .with_logprobs(&level_logprobs(levels[i]))
            })
            .collect();
        gw.register_mock("m", script).map_err(|e| e.to_string())?;
        let reranker = LlmReranker::new(&gw, RerankSettings::on("m"));
        let candidates = Ranking::from_ordered(
            "q",
            order
                .iter()
                .enumerate()
                .map(|(r, &i)| RankedDoc::new(docs[i].id.as_str(), (n - r) as f64))
                .collect(),
            "in",
        )
        .unwrap();
        let out = reranker.rerank(
            &Query::seed("q", "query"),
            &candidates,
            &DocStore::new(&docs),
        );
        ensure!(
            out.failures == 0,
            "case {case}: {} scoring failures",
            out.failures
        );

        let got: Vec<&str> = out.ranking.doc_ids().collect();
        let mut sorted_in: Vec<&str> = candidates.doc_ids().collect();
        let mut sorted_out = got.clone();
        sorted_in.sort();
        sorted_out.sort();
        ensure!(
            sorted_in == sorted_out,
            "case {case}: output is not a permutation of the input"
        );

        let level_of = |d: &str| levels[docs.iter().position(|x| x.id == d).unwrap()];
        let mut expected: Vec<&str> = candidates.doc_ids().collect();
        expected.sort_by_key(|d| std::cmp::Reverse(level_of(d)));
        ensure!(
            got == expected,
            "case {case}: ties or order differ: {got:?} vs {expected:?}"
        );

        let mut qrels = QRels::new();
        for (i, d) in docs.iter().enumerate() {
            qrels.insert("q", d.id.as_str(), levels[i]).unwrap();
        }
        if qrels.relevant_count("q") > 0 {
            let before = ndcg_at_k(&candidates, &qrels, 10);
            let after = ndcg_at_k(&out.ranking, &qrels, 10);
            ensure!(
                after + 1e-12 >= before,
                "case {case}: oracle scorer lowered nDCG {before} -> {after}"
            );
            ensure!(
                (after - 1.0).abs() < 1e-12,
                "case {case}: oracle order nDCG {after}"
            );
        }
    }

    let world = common::retrieval_world(1, 40);
    ensure!(
        world.docs.len() == 40 && world.qrels.relevant_count("q0") == 5,
        "toy corpus shape"
    );
    let mut gw = Gateway::new();
    gw.register_mock("m", world.script.clone())
        .map_err(|e| e.to_string())?;
    let index = build_index(&world.docs, Bm25Params::default()).map_err(|e| e.to_string())?;
    let q = &world.queries[0];
    let candidates = index.retrieve(q, 40);
    let bm25 = ndcg_at_k(&candidates, &world.qrels, 10);
    let out = LlmReranker::new(&gw, RerankSettings::on("m")).rerank(
        q,
        &candidates,
        &DocStore::new(&world.docs),
    );
    let ndcg = ndcg_at_k(&out.ranking, &world.qrels, 10);
    ensure!(
        (ndcg - 1.0).abs() < 1e-12,
        "toy corpus nDCG@10 {ndcg} (BM25 {bm25})"
    );
    ensure!(bm25 < 1.0, "toy corpus is too easy for BM25");
    Ok(())
}

// ---- 5. synthesis determinism and fan-out -----------------------------------

fn c5_pipeline() -> Check {
    let world = common::SynthWorld::new(10, 5);
    let mut bytes = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let cfg = common::write_all(dir.path(), 10, 5, "");
        cli(
            &cfg,
            &[
                "synthesize",
                "--seeds",
                dir.path().join("seeds.jsonl").to_str().unwrap(),
            ],
        )
        .map_err(|e| format!("{e:#}"))?;
        let out = dir.path().join("runs/demo/synthesize");
        let pairs: Vec<LabeledPair> =
            read_jsonl(out.join("synthesized.jsonl")).map_err(|e| e.to_string())?;
        let mut counts: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        for p in &pairs {
            let c = counts.entry(p.query.id.as_str()).or_default();
            if p.intended_label {
                c.0 += 1;
            } else {
                c.1 += 1;
            }
        }
        ensure!(
            counts.len() == 20,
            "{} expanded queries, expected 20",
            counts.len()
        );
        for (q, (pos, neg)) in &counts {
            ensure!(
                (3..=7).contains(pos) && (1..=5).contains(neg),
                "query {q}: {pos} positives, {neg} negatives"
            );
        }
        let report: Value =
            serde_json::from_str(&fs::read_to_string(out.join("filter_report.json")).unwrap())
                .unwrap();
        let n = |k: &str| report[k].as_u64().unwrap() as usize;
        ensure!(
            n("total") == n("kept") + n("dropped_mismatch") + n("dropped_unparseable"),
            "filter report does not reconcile: {report}"
        );
        ensure!(
            n("total") == world.total_pairs(),
            "total {} vs scripted {}",
            n("total"),
            world.total_pairs()
        );
        let designed = world.agreeing as f64 / world.total_pairs() as f64;
        ensure!(
            report["retention"].as_f64() == Some(designed),
            "retention {} vs designed {designed}",
            report["retention"]
        );
        bytes.push((
            fs::read(out.join("pairs.jsonl")).unwrap(),
            fs::read(out.join("transcript.jsonl")).unwrap(),
        ));
    }
    ensure!(bytes[0].0 == bytes[1].0, "pairs files differ between runs");
    ensure!(bytes[0].1 == bytes[1].1, "transcripts differ between runs");
    Ok(())
}

// ---- 6. dataset build -------------------------------------------------------

fn c6_build() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let seed_pool = dir.path().join("seed_pool.jsonl");
    let synth = dir.path().join("synth.jsonl");
    write_jsonl(&common::seed_pool(16_000, 0.5, 61), &seed_pool).unwrap();
    write_jsonl(&common::synth_pool(7_000, 0.5, 62), &synth).unwrap();
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let sub = dir.path().join(name);
        let cfg = common::write_all(&sub, 1, 6, "");
        cli(
            &cfg,
            &[
                "build",
                "--seed-pool",
                seed_pool.to_str().unwrap(),
                "--synth",
                synth.to_str().unwrap(),
            ],
        )
        .map_err(|e| format!("{e:#}"))?;
        outputs.push(sub.join("runs/demo/build/full"));
    }
    let records: Vec<SftRecord> =
        read_jsonl(outputs[0].join("sft.jsonl")).map_err(|e| e.to_string())?;
    ensure!(records.len() == 20_000, "{} records", records.len());
    let gap = |src: Option<PairSource>| {
        let (t, f) = records
            .iter()
            .filter(|r| src.is_none_or(|s| r.source == s))
            .fold(
                (0i64, 0i64),
                |(t, f), r| if r.label { (t + 1, f) } else { (t, f + 1) },
            );
        (t - f).abs()
    };
    ensure!(gap(None) <= 2, "overall label gap {}", gap(None));
    ensure!(
        gap(Some(PairSource::SeedPool)) <= 1,
        "seed pool label gap {}",
        gap(Some(PairSource::SeedPool))
    );
    ensure!(
        gap(Some(PairSource::Synthesized)) <= 1,
        "synthesized label gap {}",
        gap(Some(PairSource::Synthesized))
    );
    let by_source = |s| records.iter().filter(|r| r.source == s).count();
    ensure!(
        by_source(PairSource::SeedPool) == 14_000 && by_source(PairSource::Synthesized) == 6_000,
        "pool contributions off"
    );
    ensure!(
        fs::read(outputs[0].join("sft.jsonl")).unwrap()
            == fs::read(outputs[1].join("sft.jsonl")).unwrap(),
        "SFT files differ between reruns"
    );
    let manifest = fs::read_to_string(outputs[0].join("manifest.txt")).unwrap();
    let keys: Vec<&str> = manifest.lines().take(5).collect();
    ensure!(
        keys == [
            "lora_rank=32",
            "lora_alpha=64",
            "learning_rate=6e-5",
            "batch_size=128",
            "epochs=5"
        ],
        "manifest hyperparameters: {keys:?}"
    );
    let rest: Vec<&str> = manifest
        .lines()
        .skip(5)
        .map(|l| l.split('=').next().unwrap())
        .collect();
    ensure!(
        rest == ["base_model", "dataset_path"],
        "manifest keys: {manifest}"
    );
    Ok(())
}

// ---- 7. ablation partitions -------------------------------------------------

fn c7_ablation() -> Check {
    let mut pool = common::synth_pool(2_001, 0.5, 7);
    pool.extend(common::seed_pool(50, 0.5, 8));
    let synth_ids: HashSet<&str> = pool
        .iter()
        .filter(|p| p.source == PairSource::Synthesized)
        .map(|p| p.id())
        .collect();
    let ids = |v: &[LabeledPair]| -> Vec<String> {
        v.iter()
            .filter(|p| p.source == PairSource::Synthesized)
            .map(|p| p.id().to_string())
            .collect()
    };
    let short = ids(&ablation_split(&pool, AblationVariant::ShortTrace));
    let long = ids(&ablation_split(&pool, AblationVariant::LongTrace));
    let short_set: HashSet<&str> = short.iter().map(String::as_str).collect();
    let long_set: HashSet<&str> = long.iter().map(String::as_str).collect();
    ensure!(short_set.is_disjoint(&long_set), "short and long overlap");
    ensure!(
        short.len() + long.len() == synth_ids.len(),
        "short + long = {} of {}",
        short.len() + long.len(),
        synth_ids.len()
    );
    let union: HashSet<&str> = short_set.union(&long_set).copied().collect();
    ensure!(union == synth_ids, "short and long do not cover the pool");
    ensure!(
        !short.is_empty() && !long.is_empty(),
        "degenerate trace split"
    );
    for (variant, kind) in [
        (AblationVariant::DailyOnly, QueryKind::Daily),
        (AblationVariant::ExpertOnly, QueryKind::Expert),
    ] {
        let got: Vec<String> = ids(&ablation_split(&pool, variant));
        let want: Vec<String> = pool
            .iter()
            .filter(|p| p.source == PairSource::Synthesized && p.query.kind == kind)
            .map(|p| p.id().to_string())
            .collect();
        ensure!(
            got == want,
            "{variant} does not select exactly {kind:?} queries"
        );
    }
    let full = ablation_split(&pool, AblationVariant::Full);
    ensure!(full == pool, "full variant changed the pool");
    Ok(())
}

// ---- 8. round-trips ---------------------------------------------------------

fn random_text(rng: &mut ChaCha8Rng) -> String {
    let parts = [
        "plain",
        "quote \"x\"",
        "tab\there",
        "new\nline",
        "ünïcødé",
        "back\\slash",
        "emoji 🦀",
        "{json: 1}",
    ];
    (0..rng.random_range(1..5))
        .map(|_| *parts.choose(rng).unwrap())
        .collect::<Vec<_>>()
        .join(" ")
}

fn roundtrip<T: JsonlRecord + PartialEq + std::fmt::Debug>(
    dir: &Path,
    name: &str,
    records: &[T],
) -> Check {
    let path = dir.join(name);
    write_jsonl(records, &path).map_err(|e| e.to_string())?;
    let back: Vec<T> = read_jsonl(&path).map_err(|e| format!("{name}: {e}"))?;
    ensure!(back == records, "{name} changed on round-trip");
    Ok(())
}

fn c8_roundtrip() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for round in 0..20 {
        let mut run = Vec::new();
        let mut qrels = QRels::new();
        for q in 0..rng.random_range(1..6) {
            let qid = format!("Q{round}_{q}");
            let n = rng.random_range(1..12);
            let mut score = rng.random_range(0..10_000_000) as f64 / 1e6;
            let mut entries = Vec::new();
            for i in 0..n {
                entries.push(RankedDoc::new(format!("doc-{round}-{i}"), score));
                score -= rng.random_range(0..3) as f64 / 1e3;
                score = (score * 1e6).round() / 1e6;
                if rng.random_bool(0.5) {
                    qrels
                        .insert(&qid, format!("doc-{round}-{i}"), rng.random_range(0..4))
                        .unwrap();
                }
            }
            run.push(Ranking::from_ordered(qid, entries, format!("tag{round}")).unwrap());
        }
        let run_path = dir.path().join("run.trec");
        write_run(&run, &run_path).map_err(|e| e.to_string())?;
        let back = read_run(&run_path).map_err(|e| e.to_string())?;
        ensure!(
            back.len() == run.len(),
            "round {round}: run query count changed"
        );
        for (a, b) in run.iter().zip(&back) {
            ensure!(
                a.query_id == b.query_id && a.tag == b.tag,
                "round {round}: run header changed"
            );
            let same = a.entries().len() == b.entries().len()
                && a.entries()
                    .iter()
                    .zip(b.entries())
                    .all(|(x, y)| x.doc_id == y.doc_id && (x.score - y.score).abs() < 1e-9);
            ensure!(
                same,
                "round {round}: run entries changed for {}",
                a.query_id
            );
        }
        let qrels_path = dir.path().join("qrels.txt");
        write_qrels(&qrels, &qrels_path).map_err(|e| e.to_string())?;
        ensure!(
            read_qrels(&qrels_path).map_err(|e| e.to_string())? == qrels,
            "round {round}: qrels changed"
        );

        let docs: Vec<Document> = (0..5)
            .map(|i| Document {
                id: format!("d{round}-{i}"),
                text: random_text(&mut rng),
            })
            .collect();
        roundtrip(dir.path(), "docs.jsonl", &docs)?;
        let mut pairs = common::synth_pool(6, 0.5, round);
        pairs.extend(common::seed_pool(6, 0.5, round));
        for p in &mut pairs {
            p.passage.text = random_text(&mut rng);
        }
        let queries: Vec<Query> = pairs.iter().map(|p| p.query.clone()).collect();
        roundtrip(dir.path(), "queries.jsonl", &queries)?;
        roundtrip(dir.path(), "pairs.jsonl", &pairs)?;
        let personas: Vec<Persona> = testkit::persona_pool(4)
            .into_iter()
            .map(|mut p| {
                p.description = random_text(&mut rng);
                p
            })
            .collect();
        roundtrip(dir.path(), "personas.jsonl", &personas)?;
        let mut questions: Vec<McQuestion> = common::qa_world().questions;
        for q in &mut questions {
            q.stem = random_text(&mut rng);
        }
        roundtrip(dir.path(), "questions.jsonl", &questions)?;
        let records: Vec<SftRecord> = pairs
            .iter()
            .map(|p| {
                synthrank::dataset::sft_record(p, &Default::default(), &Default::default())
                    .map_err(|e| e.to_string())
            })
            .collect::<Result<_, _>>()?;
        roundtrip(dir.path(), "sft.jsonl", &records)?;
    }
    Ok(())
}

// ---- 9. RAG differential ----------------------------------------------------

fn c9_rag() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::write_all(dir.path(), 1, 9, "");
    let qa_docs: Vec<Document> = read_jsonl(dir.path().join("qa_corpus.jsonl")).unwrap();
    ensure!(qa_docs.len() == 30, "{} documents", qa_docs.len());
    let corpus = dir.path().join("qa_corpus.jsonl");
    let questions = dir.path().join("questions.jsonl");
    let mut acc = HashMap::new();
    for mode in ["retrieve_only", "rerank"] {
        cli(
            &cfg,
            &[
                "rag",
                "--corpus",
                corpus.to_str().unwrap(),
                "--questions",
                questions.to_str().unwrap(),
                "--mode",
                mode,
            ],
        )
        .map_err(|e| format!("{e:#}"))?;
        let summary: Value = serde_json::from_str(
            &fs::read_to_string(dir.path().join("runs/demo/rag/summary.json")).unwrap(),
        )
        .unwrap();
        acc.insert(mode, summary["summary"]["accuracy"].as_f64().unwrap());
    }
    ensure!(
        acc["rerank"] > acc["retrieve_only"],
        "rerank {} vs retrieve-only {}",
        acc["rerank"],
        acc["retrieve_only"]
    );
    Ok(())
}

// ---- 10. verdict golden file ------------------------------------------------

fn c10_verdicts() -> Check {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/verdicts.jsonl");
    let text = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut n = 0;
    for (i, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
        let case: Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let got = split_reasoning(case["text"].as_str().unwrap())
            .ok()
            .and_then(|(_, t)| parse_verdict(&t).ok());
        ensure!(
            got == case["expect"].as_bool(),
            "case {}: got {got:?}, expected {}",
            i + 1,
            case["expect"]
        );
        n += 1;
    }
    ensure!(n == 25, "{n} golden cases, expected 25");
    Ok(())
}

fn main() {
    let criteria: [Criterion; 10] = [
        (
            1,
            "metric oracle equivalence",
            Duration::from_secs(5),
            c1_metric_oracle,
        ),
        (
            2,
            "p-MRR identity and antisymmetry",
            Duration::from_secs(1),
            c2_pmrr,
        ),
        (
            3,
            "BM25 against brute force",
            Duration::from_secs(5),
            c3_bm25,
        ),
        (4, "reranker contracts", Duration::from_secs(5), c4_reranker),
        (
            5,
            "synthesis determinism and fan-out",
            Duration::from_secs(10),
            c5_pipeline,
        ),
        (6, "dataset build", Duration::from_secs(10), c6_build),
        (
            7,
            "ablation partitions",
            Duration::from_secs(1),
            c7_ablation,
        ),
        (
            8,
            "format round-trips",
            Duration::from_secs(1),
            c8_roundtrip,
        ),
        (9, "RAG differential", Duration::from_secs(10), c9_rag),
        (
            10,
            "verdict golden file",
            Duration::from_secs(1),
            c10_verdicts,
        ),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (n, name, budget, check) in criteria {
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let result = result.and_then(|()| {
            if elapsed <= budget {
                Ok(())
            } else {
                Err(format!("over the {budget:?} budget"))
            }
        });
        match result {
            Ok(()) => println!(
                "criterion {n:>2}: PASS  {name} ({:.2?} / {budget:?})",
                elapsed
            ),
            Err(e) => {
                failed += 1;
                println!(
                    "criterion {n:>2}: FAIL  {name} ({:.2?} / {budget:?}): {e}",
                    elapsed
                );
            }
        }
    }
    let _ = panic::take_hook();
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
