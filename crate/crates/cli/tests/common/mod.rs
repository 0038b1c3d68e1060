//! Scripted worlds shared by the CLI tests, the acceptance suite and the
//! demo generator. Everything is deterministic in its seed.
#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use synthrank::corpus::{
    write_jsonl, write_qrels, Document, LabeledPair, PairSource, Passage, PassageRole, QRels,
    Query, QueryKind,
};
use synthrank::gateway::{ScriptEntry, Stage};
use synthrank::rag::{McOption, McQuestion};
use synthrank::testkit::{self, JudgeReply, SeedPlan};

pub const MOCK: &str = "mock";

/// Judge behaviour keyed on the passage id, so it does not depend on the
/// order in which passages are generated.
pub fn planned_reply(pid: &str) -> JudgeReply {
    let h = pid
        .bytes()
        .fold(17u32, |h, b| h.wrapping_mul(31).wrapping_add(b as u32));
    match h % 10 {
        0 => JudgeReply::Disagree,
        1 => JudgeReply::Unparseable,
        _ => JudgeReply::Agree,
    }
}

pub struct SynthWorld {
    pub seeds: Vec<Query>,
    pub plans: Vec<SeedPlan>,
    pub script: Vec<ScriptEntry>,
    /// Passage ids whose judge reply agrees with the intended label.
    pub agreeing: usize,
    pub disagreeing: usize,
    pub unparseable: usize,
}

impl SynthWorld {
    pub fn new(n_seeds: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let plans: Vec<SeedPlan> = (0..n_seeds)
            .map(|_| SeedPlan {
                positives: rng.random_range(3..=7),
                negatives: rng.random_range(1..=5),
            })
            .collect();
        let (mut agreeing, mut disagreeing, mut unparseable) = (0, 0, 0);
        let script = testkit::synthesis_script(&plans, |pid, _| {
            let r = planned_reply(pid);
            match r {
                JudgeReply::Agree => agreeing += 1,
                JudgeReply::Disagree => disagreeing += 1,
                JudgeReply::Unparseable => unparseable += 1,
            }
            r
        });
        SynthWorld {
            seeds: (0..n_seeds).map(testkit::seed_query).collect(),
            plans,
            script,
            agreeing,
            disagreeing,
            unparseable,
        }
    }

    pub fn total_pairs(&self) -> usize {
        2 * self
            .plans
            .iter()
            .map(|p| p.positives + p.negatives)
            .sum::<usize>()
    }
}

/// Topic words for the retrieval and QA worlds. Gold documents mention one
/// query word; lexical traps repeat all of them.
const TOPICS: &[[&str; 4]] = &[
    ["glacier", "valley", "erosion", "ice"],
    ["enzyme", "substrate", "binding", "kinetics"],
    ["tariff", "import", "quota", "trade"],
    ["sonnet", "meter", "rhyme", "stanza"],
    ["reactor", "neutron", "coolant", "fission"],
    ["mortgage", "interest", "amortization", "loan"],
    ["volcano", "magma", "eruption", "ash"],
    ["compiler", "parser", "grammar", "token"],
];

const FILLER: &[&str] = &[
    "weather",
    "garden",
    "museum",
    "bicycle",
    "orchestra",
    "harbor",
    "recipe",
    "library",
    "mountain",
    "festival",
    "railway",
    "painting",
    "market",
    "island",
    "theater",
    "bakery",
];

pub struct RetrievalWorld {
    pub docs: Vec<Document>,
    pub queries: Vec<Query>,
    pub qrels: QRels,
    pub script: Vec<ScriptEntry>,
}

fn doc_id(i: usize) -> String {
    format!("d{i:03}")
}

/// `n_queries` queries, each with five gold documents (grades 2,2,1,1,1)
/// and three lexical traps, padded with filler documents to `n_docs`.
/// The rerank script scores gold documents by grade and everything else low.
pub fn retrieval_world(n_queries: usize, n_docs: usize) -> RetrievalWorld {
    assert!(n_queries <= TOPICS.len() && n_docs >= 8 * n_queries);
    let mut docs = Vec::new();
    let mut queries = Vec::new();
    let mut qrels = QRels::new();
    let mut script = Vec::new();
    for (t, words) in TOPICS.iter().take(n_queries).enumerate() {
        let qid = format!("q{t}");
        let query = Query::seed(
            &qid,
            format!(
                "{} {} {} {} {}",
                words[0],
                words[1],
                words[2],
                words[3],
                testkit::marker(&qid)
            ),
        );
        for (j, grade) in [2u32, 2, 1, 1, 1].into_iter().enumerate() {
            let id = doc_id(docs.len());
            let text = format!(
                "{} field notes on {} collected by {} volunteers near the {}",
                testkit::marker(&id),
                words[j % 4],
                FILLER[(t + j) % FILLER.len()],
                FILLER[(t + 2 * j + 5) % FILLER.len()]
            );
            qrels.insert(&qid, &id, grade).unwrap();
            let (lt, lf) = if grade == 2 {
                (-0.01, -4.6)
            } else {
                (-0.2, -1.7)
            };
            script.push(
                ScriptEntry::new(
                    Stage::Rerank,
                    format!(
                        "{}\nPassage: {}",
                        testkit::marker(&qid),
                        testkit::marker(&id)
                    ),
                    "true",
                )
                .with_logprobs(&[("true", lt), ("false", lf)]),
            );
            docs.push(Document { id, text });
        }
        for j in 0..3 {
            let id = doc_id(docs.len());
            let text = format!(
                "{} {w0} {w1} {w2} {w3} {w0} {w1} brochure about {w2} {w3} souvenirs {}",
                testkit::marker(&id),
                FILLER[(t + j) % FILLER.len()],
                w0 = words[0],
                w1 = words[1],
                w2 = words[2],
                w3 = words[3],
            );
            docs.push(Document { id, text });
        }
        queries.push(query);
    }
    let mut f = 0;
    while docs.len() < n_docs {
        let id = doc_id(docs.len());
        let text = format!(
            "{} {} and {} notes {}",
            testkit::marker(&id),
            FILLER[f % FILLER.len()],
            FILLER[(f * 7 + 3) % FILLER.len()],
            f
        );
        docs.push(Document { id, text });
        f += 1;
    }
    script.push(
        ScriptEntry::new(Stage::Rerank, "", "false")
            .with_logprobs(&[("true", -5.0), ("false", -0.007)]),
    );
    RetrievalWorld {
        docs,
        queries,
        qrels,
        script,
    }
}

pub struct QaWorld {
    pub docs: Vec<Document>,
    pub questions: Vec<McQuestion>,
    pub script: Vec<ScriptEntry>,
}

/// Six questions over 30 documents. Each question has one gold document
/// with little lexical overlap and four traps that outrank it under BM25.
/// The reader answers correctly only when the gold document is in context.
pub fn qa_world() -> QaWorld {
    let mut docs = Vec::new();
    let mut questions = Vec::new();
    let mut script = Vec::new();
    let letters = ["A", "B", "C", "D"];
    for (t, words) in TOPICS.iter().take(6).enumerate() {
        let qid = format!("mq{t}");
        let gold_letter = letters[1 + t % 3];
        let gold_id = doc_id(docs.len());
        docs.push(Document {
            id: gold_id.clone(),
            text: format!(
                "{} the decisive fact about {} is recorded in archive {}",
                testkit::marker(&gold_id),
                words[0],
                FILLER[t]
            ),
        });
        for j in 0..4 {
            let id = doc_id(docs.len());
            docs.push(Document {
                id: id.clone(),
                text: format!(
                    "{} {w0} {w1} {w2} {w3} {w1} {w2} overview {}",
                    testkit::marker(&id),
                    FILLER[(t + j + 8) % FILLER.len()],
                    w0 = words[0],
                    w1 = words[1],
                    w2 = words[2],
                    w3 = words[3],
                ),
            });
        }
        let stem = format!(
            "Which {} {} {} {} claim holds? {}",
            words[0],
            words[1],
            words[2],
            words[3],
            testkit::marker(&qid)
        );
        script.push(
            ScriptEntry::new(
                Stage::Rerank,
                format!(
                    "{}\nPassage: {}",
                    testkit::marker(&qid),
                    testkit::marker(&gold_id)
                ),
                "true",
            )
            .with_logprobs(&[("true", -0.02), ("false", -3.9)]),
        );
        script.push(ScriptEntry::new(
            Stage::Reader,
            testkit::marker(&gold_id),
            format!("The passages settle it. The answer is ({gold_letter})."),
        ));
        questions.push(McQuestion {
            id: qid,
            stem,
            options: letters
                .iter()
                .map(|l| McOption {
                    letter: l.to_string(),
                    text: format!("claim {l} about {}", words[3]),
                })
                .collect(),
            gold: gold_letter.to_string(),
        });
    }
    script.push(
        ScriptEntry::new(Stage::Rerank, "", "false")
            .with_logprobs(&[("true", -4.0), ("false", -0.02)]),
    );
    script.push(ScriptEntry::new(
        Stage::Reader,
        "",
        "Without evidence I would guess the answer is A.",
    ));
    QaWorld {
        docs,
        questions,
        script,
    }
}

fn trace_of(rng: &mut ChaCha8Rng, label: bool) -> Option<String> {
    label.then(|| {
        let n = rng.random_range(3..40);
        (0..n)
            .map(|i| format!("step{i}"))
            .collect::<Vec<_>>()
            .join(" ")
    })
}

/// Seed-pool pairs with a positive share of roughly `pos_share`.
pub fn seed_pool(n: usize, pos_share: f64, seed: u64) -> Vec<LabeledPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = rng.random_bool(pos_share);
            let mut p = LabeledPair::new(
                Query::seed(format!("sp{i}"), format!("pool question {i}")),
                Passage {
                    id: format!("sp{i}-p"),
                    text: format!("pool passage {i}"),
                    role: if label {
                        PassageRole::Positive
                    } else {
                        PassageRole::HardNegative
                    },
                    material_desc: None,
                },
                PairSource::SeedPool,
            );
            p.reasoning_trace = trace_of(&mut rng, label);
            p
        })
        .collect()
}

/// Synthesized pairs alternating daily and expert queries, with traces of
/// varied length on every pair.
pub fn synth_pool(n: usize, pos_share: f64, seed: u64) -> Vec<LabeledPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = rng.random_bool(pos_share);
            let daily = i % 2 == 0;
            let query = Query {
                id: format!("syn{i}"),
                text: format!("synthetic question {i}"),
                scenario: daily.then(|| format!("scenario {i}")),
                kind: if daily {
                    QueryKind::Daily
                } else {
                    QueryKind::Expert
                },
                persona_id: daily.then(|| "p0".to_string()),
            };
            let mut p = LabeledPair::new(
                query,
                Passage {
                    id: format!("syn{i}-p"),
                    text: format!("synthetic passage {i}"),
                    role: if label {
                        PassageRole::Positive
                    } else {
                        PassageRole::HardNegative
                    },
                    material_desc: Some(format!("material {i}")),
                },
                PairSource::Synthesized,
            );
            let n = rng.random_range(3..60);
            p.reasoning_trace = Some(
                (0..n)
                    .map(|k| format!("w{k}"))
                    .collect::<Vec<_>>()
                    .join(" "),
            );
            p.judge_verdict = Some(label);
            p
        })
        .collect()
}

/// Config for the scripted worlds. Sections reference one mock endpoint.
pub fn config_text(name: &str, seed: u64, extra: &str) -> String {
    format!(
        r#"name = "{name}"
seed = {seed}
output_dir = "runs"

[endpoints.{MOCK}]
url = "mock:"
model = "mock"
mock_script = "mock_script.jsonl"

[synth]
endpoint = "{MOCK}"
persona_pool = "personas.jsonl"

[judge]
endpoint = "{MOCK}"

[reranker]
endpoint = "{MOCK}"

[reader]
endpoint = "{MOCK}"
{extra}"#
    )
}

/// Writes every world into `dir` with a single mock script and returns the
/// config path.
pub fn write_all(dir: &Path, n_seeds: usize, seed: u64, extra_config: &str) -> PathBuf {
    fs::create_dir_all(dir).unwrap();
    let synth = SynthWorld::new(n_seeds, seed);
    let retrieval = retrieval_world(4, 64);
    let qa = qa_world();
    let mut script = synth.script.clone();
    script.extend(
        retrieval
            .script
            .iter()
            .filter(|e| !e.contains.is_empty())
            .cloned(),
    );
    script.extend(qa.script.iter().cloned());
    write_jsonl(&script, dir.join("mock_script.jsonl")).unwrap();
    write_jsonl(&synth.seeds, dir.join("seeds.jsonl")).unwrap();
    write_jsonl(&testkit::persona_pool(8), dir.join("personas.jsonl")).unwrap();
    write_jsonl(&retrieval.docs, dir.join("corpus.jsonl")).unwrap();
    write_jsonl(&retrieval.queries, dir.join("queries.jsonl")).unwrap();
    write_qrels(&retrieval.qrels, dir.join("qrels.txt")).unwrap();
    write_jsonl(&qa.docs, dir.join("qa_corpus.jsonl")).unwrap();
    write_jsonl(&qa.questions, dir.join("questions.jsonl")).unwrap();
    let config = dir.join("config.toml");
    fs::write(&config, config_text("demo", seed, extra_config)).unwrap();
    config
}
