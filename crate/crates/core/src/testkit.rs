//! Scripted mock worlds for tests and demos.
//!
//! Every generated string carries a `<<marker>>` naming the object it belongs
//! to, so script entries can match on markers without colliding.

use crate::corpus::Query;
use crate::gateway::{ScriptEntry, Stage};
use crate::synth::Persona;

/// What the judge says about one synthesized passage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JudgeReply {
    /// Verdict equal to the intended label.
    Agree,
    /// Verdict opposite to the intended label.
    Disagree,
    /// No verdict token at all.
    Unparseable,
}

#[derive(Debug, Clone)]
pub struct SeedPlan {
    pub positives: usize,
    pub negatives: usize,
}

pub fn marker(id: &str) -> String {
    format!("<<{id}>>")
}

pub fn seed_query(i: usize) -> Query {
    let id = format!("s{i:03}");
    Query::seed(id.clone(), format!("seed question {}", marker(&id)))
}

pub fn persona_pool(n: usize) -> Vec<Persona> {
    (0..n)
        .map(|i| Persona {
            id: format!("p{i}"),
            description: format!("A practitioner number {i} who cares about details."),
        })
        .collect()
}

fn list(items: &[String]) -> String {
    items
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{}. {}", i + 1, s))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn passage_text(passage_id: &str) -> String {
    format!(
        "Passage {} with generated supporting content.",
        marker(passage_id)
    )
}

/// Script entries for synthesizing the seed queries `seed_query(i)` for
/// each plan `i`, plus one judge entry per passage chosen by `judge`.
pub fn synthesis_script(
    plans: &[SeedPlan],
    mut judge: impl FnMut(&str, bool) -> JudgeReply,
) -> Vec<ScriptEntry> {
    let mut script = Vec::new();
    for (i, plan) in plans.iter().enumerate() {
        let seed_id = format!("s{i:03}");
        script.push(ScriptEntry::new(
            Stage::Persona,
            marker(&seed_id),
            format!("A specialist persona for {}", marker(&seed_id)),
        ));
        let daily_id = format!("{seed_id}-daily");
        let expert_id = format!("{seed_id}-expert");
        script.push(ScriptEntry::new(
            Stage::Daily,
            marker(&seed_id),
            format!(
                "```json{{\n    \"query\" : \"daily question {m}\",\n    \"scenario\" : \"I ran into this at home {m}.\"\n}}```",
                m = marker(&daily_id)
            ),
        ));
        script.push(ScriptEntry::new(
            Stage::Expert,
            marker(&seed_id),
            format!("expert question {}", marker(&expert_id)),
        ));
        for qid in [&daily_id, &expert_id] {
            script.push(ScriptEntry::new(
                Stage::Solve,
                marker(qid),
                format!(
                    "Solution for {}: step one gathers evidence, step two weighs it, step three concludes.",
                    marker(qid)
                ),
            ));
            let pos: Vec<String> = (1..=plan.positives)
                .map(|j| format!("material {}", marker(&format!("{qid}-pos-{j}"))))
                .collect();
            script.push(ScriptEntry::new(Stage::Extract, marker(qid), list(&pos)));
            let neg: Vec<String> = (1..=plan.negatives)
                .map(|j| format!("distractor {}", marker(&format!("{qid}-neg-{j}"))))
                .collect();
            script.push(ScriptEntry::new(Stage::Negatives, marker(qid), list(&neg)));
            let ids = (1..=plan.positives)
                .map(|j| (format!("{qid}-pos-{j}"), true))
                .chain((1..=plan.negatives).map(|j| (format!("{qid}-neg-{j}"), false)));
            for (pid, label) in ids {
                script.push(ScriptEntry::new(
                    Stage::Passage,
                    marker(&pid),
                    passage_text(&pid),
                ));
                let verdict = match judge(&pid, label) {
                    JudgeReply::Agree => label.to_string(),
                    JudgeReply::Disagree => (!label).to_string(),
                    JudgeReply::Unparseable => "I cannot decide.".to_string(),
                };
                script.push(ScriptEntry::new(
                    Stage::Judge,
                    marker(&pid),
                    format!("<think>weighing {}</think>{verdict}", marker(&pid)),
                ));
            }
        }
    }
    script
}
