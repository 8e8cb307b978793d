use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::affect::{administer, AffectiveState, Phase, Questionnaire};
use crate::agent::{Agent, AgentId, ConversationId};
use crate::backend::{
    BackendKind, GenerationBackend, RemoteBackend, RemoteConfig, ScriptedBackend, ScriptedScenario,
};
use crate::metrics::{assess, GroupId, GroupScores, MetricThresholds, PolarizationAssessment};
use crate::protocol::{
    run_conversation, Conversation, ConversationSettings, DiscussionTrigger, ProtocolError,
};
use crate::seed::mix_seed;

use super::session::{end_event, log_file_name, message_event, phase_events, start_event};
use super::{
    load_agents, run_id, Clock, ExperimentError, ExperimentSpec, Pairing, RunRecord, RunStatus,
    SessionEvent, SessionWriter,
};

/// Party label for agents that match no group.
pub const UNALIGNED: &str = "unaligned";

/// Seed index reserved for the draw pairing shuffle.
const PAIRING_STREAM: u64 = u64::MAX;

enum BackendSource {
    Scripted(Arc<ScriptedScenario>),
    Remote(Arc<RemoteBackend>),
}

impl BackendSource {
    /// Scripted backends are rebuilt per run so runs never share script state.
    fn for_run(&self) -> Arc<dyn GenerationBackend> {
        match self {
            BackendSource::Scripted(s) => Arc::new(ScriptedBackend::new(s.clone())),
            BackendSource::Remote(r) => r.clone(),
        }
    }
}

/// An experiment whose configuration has been fully loaded and checked.
/// Every configuration problem surfaces here, before any run starts.
pub struct PreparedExperiment {
    spec: ExperimentSpec,
    agents: Vec<Agent>,
    run_sets: Vec<Vec<usize>>,
    pre: Questionnaire,
    post: Questionnaire,
    parties: BTreeMap<AgentId, String>,
    backend: BackendSource,
    clock: Clock,
}

/// What happened to one run index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunOutcome {
    Executed(PathBuf),
    /// A completed log already existed and was reused.
    Reused(PathBuf),
}

impl PreparedExperiment {
    pub fn new(spec: ExperimentSpec) -> Result<Self, ExperimentError> {
        spec.validate()?;
        let agents = load_agents(&spec.agents_file)?;
        let run_sets = resolve_run_sets(&spec, &agents)?;
        let load_q =
            |p: &Path| Questionnaire::load(p).map_err(|e| ExperimentError::Config(e.to_string()));
        let pre = load_q(&spec.pre_questionnaire)?;
        let post = load_q(&spec.post_questionnaire)?;
        if pre.keys() != post.keys() {
            return Err(ExperimentError::Config(
                "pre and post questionnaires must cover the same (group, kind) pairs".into(),
            ));
        }
        for item in pre.items() {
            if !spec.groups.contains(&item.group) {
                return Err(ExperimentError::Config(format!(
                    "questionnaire item {} targets unknown group {}",
                    item.id, item.group
                )));
            }
        }
        for id in spec.parties.keys() {
            if !agents.iter().any(|a| a.id().as_str() == id) {
                return Err(ExperimentError::Config(format!(
                    "parties names unknown agent {id}"
                )));
            }
        }
        let parties = agents
            .iter()
            .map(|a| {
                let label = spec
                    .parties
                    .get(a.id().as_str())
                    .cloned()
                    .unwrap_or_else(|| {
                        party_label(a.profile().political_standpoint(), &spec.groups)
                    });
                (a.id().clone(), label)
            })
            .collect();
        let (backend, clock) = match spec.backend.kind {
            BackendKind::Scripted => {
                let path = spec.backend.scenario.as_deref().unwrap_or_default();
                let scenario = ScriptedScenario::load(Path::new(path))
                    .map_err(|e| ExperimentError::Config(e.to_string()))?;
                (BackendSource::Scripted(Arc::new(scenario)), Clock::Logical)
            }
            BackendKind::Remote => {
                let config = RemoteConfig::from_backend_config(&spec.backend)
                    .map_err(ExperimentError::Config)?;
                (
                    BackendSource::Remote(Arc::new(RemoteBackend::new(config))),
                    Clock::Wall,
                )
            }
        };
        Ok(Self {
            spec,
            agents,
            run_sets,
            pre,
            post,
            parties,
            backend,
            clock,
        })
    }

    pub fn spec(&self) -> &ExperimentSpec {
        &self.spec
    }

    pub fn log_path(&self, run_index: u64) -> PathBuf {
        self.spec
            .output_dir
            .join(log_file_name(&self.spec.name, &run_id(run_index)))
    }

    fn run_agents(&self, run_index: u64) -> Vec<Agent> {
        let set = &self.run_sets[(run_index % self.run_sets.len() as u64) as usize];
        set.iter().map(|&i| self.agents[i].clone()).collect()
    }

    fn trigger(&self) -> DiscussionTrigger {
        DiscussionTrigger::new(
            self.spec.trigger.topic.clone(),
            self.spec.trigger.context.clone(),
            &format!(
                "Each message must contain at most {} words.",
                self.spec.word_limit
            ),
        )
        .expect("topic validated with the spec")
    }

    fn instruction(&self) -> String {
        format!(
            "Write your next message in this discussion, in at most {} words. Reply with the message text only.",
            self.spec.word_limit
        )
    }
}

/// Party label from a political standpoint: the single group named in it
/// (case-insensitive), else [`UNALIGNED`].
pub fn party_label(standpoint: &str, groups: &[GroupId]) -> String {
    let lower = standpoint.to_lowercase();
    let hits: Vec<&GroupId> = groups
        .iter()
        .filter(|g| lower.contains(&g.as_str().to_lowercase()))
        .collect();
    match hits.as_slice() {
        [one] => one.to_string(),
        _ => UNALIGNED.to_string(),
    }
}

fn resolve_run_sets(
    spec: &ExperimentSpec,
    agents: &[Agent],
) -> Result<Vec<Vec<usize>>, ExperimentError> {
    let position: BTreeMap<&str, usize> = agents
        .iter()
        .enumerate()
        .map(|(i, a)| (a.id().as_str(), i))
        .collect();
    let mut sets = match &spec.pairing {
        Pairing::All => vec![(0..agents.len()).collect::<Vec<_>>()],
        Pairing::RunGroups { groups } => groups
            .iter()
            .map(|g| {
                g.iter()
                    .map(|id| {
                        position.get(id.as_str()).copied().ok_or_else(|| {
                            ExperimentError::Config(format!("run group names unknown agent {id}"))
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?,
        Pairing::Draw { size } => {
            if *size > agents.len() {
                return Err(ExperimentError::Config(format!(
                    "draw size {size} exceeds the {} loaded agents",
                    agents.len()
                )));
            }
            let mut pool: Vec<usize> = (0..agents.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.master_seed, PAIRING_STREAM));
            pool.shuffle(&mut rng);
            pool.chunks_exact(*size).map(<[usize]>::to_vec).collect()
        }
    };
    for set in &mut sets {
        // Speaking order follows the agent file.
        set.sort_unstable();
        let before = set.len();
        set.dedup();
        if set.len() != before {
            return Err(ExperimentError::Config(
                "an agent appears twice in one run group".into(),
            ));
        }
        if set.iter().all(|&i| agents[i].is_observer()) {
            return Err(ExperimentError::Config(
                "every run set needs at least one non-observer agent".into(),
            ));
        }
    }
    Ok(sets)
}

/// Loads the spec's inputs and executes every run.
pub fn run_experiment(spec: ExperimentSpec) -> Result<Vec<RunRecord>, ExperimentError> {
    let prepared = PreparedExperiment::new(spec)?;
    run_prepared(&prepared, |_, _| {})
}

/// Executes all runs, `spec.workers` at a time. Runs whose log already
/// holds a completed run are reused. `progress` is called once per run.
pub fn run_prepared(
    prepared: &PreparedExperiment,
    progress: impl Fn(&RunRecord, &RunOutcome) + Sync,
) -> Result<Vec<RunRecord>, ExperimentError> {
    let out = &prepared.spec.output_dir;
    std::fs::create_dir_all(out).map_err(|e| ExperimentError::Io {
        path: out.display().to_string(),
        message: e.to_string(),
    })?;
    let runs = prepared.spec.runs;
    let next = AtomicU64::new(0);
    let slots: Mutex<Vec<Option<Result<RunRecord, ExperimentError>>>> =
        Mutex::new((0..runs).map(|_| None).collect());
    let workers = prepared.spec.workers.min(runs as usize).max(1);

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= runs {
                    break;
                }
                let result = execute_or_reuse(prepared, i);
                if let Ok((record, outcome)) = &result {
                    progress(record, outcome);
                }
                slots.lock().expect("result lock poisoned")[i as usize] =
                    Some(result.map(|(r, _)| r));
            });
        }
    });

    slots
        .into_inner()
        .expect("result lock poisoned")
        .into_iter()
        .map(|r| r.expect("every run index is visited"))
        .collect()
}

fn execute_or_reuse(
    prepared: &PreparedExperiment,
    run_index: u64,
) -> Result<(RunRecord, RunOutcome), ExperimentError> {
    let path = prepared.log_path(run_index);
    if path.exists() {
        if let Ok(existing) = super::load_run(&path) {
            if existing.is_completed() {
                return Ok((existing, RunOutcome::Reused(path)));
            }
        }
    }
    let record = execute_run(prepared, run_index, &path)?;
    Ok((record, RunOutcome::Executed(path)))
}

fn execute_run(
    prepared: &PreparedExperiment,
    run_index: u64,
    path: &Path,
) -> Result<RunRecord, ExperimentError> {
    let spec = &prepared.spec;
    let rid = run_id(run_index);
    let mut agents = prepared.run_agents(run_index);
    let agent_ids: Vec<AgentId> = agents.iter().map(|a| a.id().clone()).collect();
    let participants: Vec<AgentId> = agents
        .iter()
        .filter(|a| !a.is_observer())
        .map(|a| a.id().clone())
        .collect();
    let policy = spec.turn_policy();
    let conversation_id = ConversationId::new(format!("{}-{rid}", spec.name));
    let backend = prepared.backend.for_run();

    let mut record = RunRecord {
        experiment: spec.name.clone(),
        run_id: rid.clone(),
        run_index,
        seed: mix_seed(spec.master_seed, run_index),
        parties: agent_ids
            .iter()
            .map(|id| (id.clone(), prepared.parties[id].clone()))
            .collect(),
        agent_ids,
        groups: spec.groups.clone(),
        word_limit: spec.word_limit,
        conversation: Conversation {
            id: conversation_id.clone(),
            trigger: prepared.trigger(),
            order: crate::protocol::derive_order(&participants, policy, run_index),
            budget: spec.budget,
            transcript: Vec::new(),
        },
        pre_states: BTreeMap::new(),
        post_states: BTreeMap::new(),
        assessments_pre: BTreeMap::new(),
        assessments_post: BTreeMap::new(),
        word_counts: Vec::new(),
        status: RunStatus::Completed,
        error: None,
    };

    let mut log = SessionWriter::create(path, &rid, prepared.clock)?;
    log.emit(start_event(&record))?;

    let pre = measure(
        prepared,
        &agents,
        &conversation_id,
        Phase::Pre,
        backend.as_ref(),
    );
    record.pre_states = pre.states;
    record.assessments_pre = pre.assessments;
    log.emit_all(phase_events(
        Phase::Pre,
        &record.pre_states,
        &record.assessments_pre,
    ))?;
    if let Some(e) = pre.error {
        return abort(record, log, e);
    }

    log.emit(SessionEvent::Trigger {
        content: record.conversation.trigger.rendered.clone(),
    })?;
    let settings = ConversationSettings {
        budget: spec.budget,
        policy,
        run_index,
        instruction: prepared.instruction(),
    };
    let mut write_error = None;
    let result = run_conversation(
        &mut agents,
        conversation_id.clone(),
        record.conversation.trigger.clone(),
        &settings,
        backend.as_ref(),
        |m| {
            if write_error.is_none() {
                write_error = log.emit(message_event(m, spec.word_limit)).err();
            }
        },
    );
    if let Some(e) = write_error {
        return Err(e);
    }
    match result {
        Ok(conversation) => record.conversation = conversation,
        Err(ProtocolError::Aborted { partial, source }) => {
            record.conversation = *partial;
            record.word_counts = word_counts(&record.conversation);
            return abort(record, log, source.to_string());
        }
        Err(other) => return abort(record, log, other.to_string()),
    }
    record.word_counts = word_counts(&record.conversation);

    let post = measure(
        prepared,
        &agents,
        &conversation_id,
        Phase::Post,
        backend.as_ref(),
    );
    if let Some(e) = post.error {
        return abort(record, log, e);
    }
    record.post_states = post.states;
    record.assessments_post = post.assessments;
    log.emit_all(phase_events(
        Phase::Post,
        &record.post_states,
        &record.assessments_post,
    ))?;
    log.emit(end_event(&record))?;
    log.finish()?;
    Ok(record)
}

fn word_counts(c: &Conversation) -> Vec<usize> {
    c.transcript
        .iter()
        .map(|m| crate::protocol::word_count(&m.content))
        .collect()
}

fn abort(
    mut record: RunRecord,
    mut log: SessionWriter,
    error: String,
) -> Result<RunRecord, ExperimentError> {
    log::warn!("{} aborted: {error}", record.run_id);
    record.status = RunStatus::Aborted;
    record.error = Some(error);
    record.post_states.clear();
    record.assessments_post.clear();
    log.emit(end_event(&record))?;
    log.finish()?;
    Ok(record)
}

struct Measurement {
    states: BTreeMap<AgentId, AffectiveState>,
    assessments: BTreeMap<AgentId, PolarizationAssessment>,
    error: Option<String>,
}

/// Administers the phase's questionnaire to every agent in order, stopping
/// at the first failure. Agents measured before the failure are kept.
fn measure(
    prepared: &PreparedExperiment,
    agents: &[Agent],
    conversation: &ConversationId,
    phase: Phase,
    backend: &dyn GenerationBackend,
) -> Measurement {
    let questionnaire = match phase {
        Phase::Pre => &prepared.pre,
        Phase::Post => &prepared.post,
    };
    let mut m = Measurement {
        states: BTreeMap::new(),
        assessments: BTreeMap::new(),
        error: None,
    };
    for agent in agents {
        match administer(agent, conversation, questionnaire, phase, backend) {
            Ok(state) => {
                if let Some(a) =
                    assessment(&state, &prepared.spec.groups, &prepared.spec.thresholds)
                {
                    m.assessments.insert(agent.id().clone(), a);
                }
                m.states.insert(agent.id().clone(), state);
            }
            Err(e) => {
                m.error = Some(format!("{phase} questionnaire for {}: {e}", agent.id()));
                break;
            }
        }
    }
    m
}

/// Assessment of a measured state, when it holds love and hate for every
/// group of a universe of at least two groups.
fn assessment(
    state: &AffectiveState,
    groups: &[GroupId],
    thresholds: &MetricThresholds,
) -> Option<PolarizationAssessment> {
    GroupScores::from_state(state, groups)
        .ok()
        .map(|s| assess(&s, thresholds))
}
