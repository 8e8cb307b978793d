//! Shared helpers for integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use polarsim::affect::{AffectKind, AffectiveState, AnswerRecord, Phase};
use polarsim::agent::{AgentId, Author, ConversationId};
use polarsim::experiment::{run_experiment, run_id, ExperimentSpec, RunRecord, RunStatus};
use polarsim::metrics::{assess, GroupId, GroupScores, MetricThresholds};
use polarsim::protocol::{Conversation, DiscussionTrigger, Message, TurnBudget};

pub fn presets() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../presets")
        .canonicalize()
        .expect("presets directory")
}

/// A shipped preset with its output redirected to `out`.
pub fn preset(name: &str, out: &Path) -> ExperimentSpec {
    let mut spec = ExperimentSpec::load(&presets().join(format!("{name}.toml")))
        .unwrap_or_else(|e| panic!("preset {name}: {e}"));
    spec.output_dir = out.to_path_buf();
    spec
}

pub fn run(spec: ExperimentSpec) -> Vec<RunRecord> {
    run_experiment(spec).expect("experiment runs")
}

/// File name → bytes for every log in `dir`.
pub fn read_logs(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .expect("log dir")
        .map(|e| e.expect("dir entry").path())
        .filter(|p| p.extension().is_some_and(|x| x == "log"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect()
}

pub fn g(s: &str) -> GroupId {
    GroupId::new(s).unwrap()
}

pub fn id(s: &str) -> AgentId {
    AgentId::new(s).unwrap()
}

pub type Scores<'a> = &'a [(&'a str, AffectKind, i64)];

pub fn state(phase: Phase, scores: Scores) -> AffectiveState {
    AffectiveState::from_answers(
        phase,
        scores.iter().map(|(group, kind, value)| AnswerRecord {
            item_id: format!("{kind}_{group}"),
            group: g(group),
            kind: *kind,
            value: *value,
            raw: value.to_string(),
            clamped: false,
            attempts: 1,
        }),
    )
}

pub struct SynthAgent<'a> {
    pub id: &'a str,
    pub party: &'a str,
    pub pre: Scores<'a>,
    pub post: Scores<'a>,
}

pub fn words(n: usize) -> String {
    vec!["word"; n].join(" ")
}

/// A completed run built directly from scores and message lengths. The
/// first agent speaks every message.
pub fn synthetic_record(
    run_index: u64,
    agents: &[SynthAgent],
    message_words: &[usize],
) -> RunRecord {
    let groups = vec![g("Republican"), g("Democrat")];
    let rid = run_id(run_index);
    let conv_id = ConversationId::new(format!("synthetic-{rid}"));
    let speaker = id(agents[0].id);
    let transcript = message_words
        .iter()
        .enumerate()
        .map(|(i, n)| Message {
            conversation: conv_id.clone(),
            author: Author::Agent(speaker.clone()),
            content: words(*n),
            global_index: i as u64,
        })
        .collect();
    let t = MetricThresholds::default();
    let mut rec = RunRecord {
        experiment: "synthetic".into(),
        run_id: rid,
        run_index,
        seed: run_index,
        agent_ids: agents.iter().map(|a| id(a.id)).collect(),
        groups: groups.clone(),
        parties: agents
            .iter()
            .map(|a| (id(a.id), a.party.to_string()))
            .collect(),
        word_limit: 50,
        conversation: Conversation {
            id: conv_id,
            trigger: DiscussionTrigger::new("Synthetic", "", "").unwrap(),
            order: vec![speaker],
            budget: TurnBudget::Messages(message_words.len() as u32),
            transcript,
        },
        pre_states: BTreeMap::new(),
        post_states: BTreeMap::new(),
        assessments_pre: BTreeMap::new(),
        assessments_post: BTreeMap::new(),
        word_counts: message_words.to_vec(),
        status: RunStatus::Completed,
        error: None,
    };
    for a in agents {
        let pre = state(Phase::Pre, a.pre);
        let post = state(Phase::Post, a.post);
        if let Ok(s) = GroupScores::from_state(&pre, &groups) {
            rec.assessments_pre.insert(id(a.id), assess(&s, &t));
        }
        if let Ok(s) = GroupScores::from_state(&post, &groups) {
            rec.assessments_post.insert(id(a.id), assess(&s, &t));
        }
        rec.pre_states.insert(id(a.id), pre);
        rec.post_states.insert(id(a.id), post);
    }
    rec
}
