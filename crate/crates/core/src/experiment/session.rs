//! Line-delimited session logs.
//!
//! One file per run, `<experiment>-<run_id>.log`. Every line is a JSON
//! object with `ts`, `run_id` and an `event` tag:
//!
//! | event                  | written                                    |
//! |------------------------|--------------------------------------------|
//! | `run_start`            | first; carries versions and run settings   |
//! | `questionnaire_answer` | per agent and item, pre then post          |
//! | `assessment`           | per agent after each questionnaire phase   |
//! | `trigger`              | when the conversation opens                |
//! | `message`              | as each message is broadcast               |
//! | `run_end`              | last; `completed` or `aborted`             |
//!
//! A log without `run_end`, or whose final line was cut short, loads as an
//! aborted run.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{LineWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::affect::{AffectKind, AffectiveState, AnswerRecord, Phase};
use crate::agent::{AgentId, Author, ConversationId};
use crate::backend::TEMPLATE_VERSION;
use crate::metrics::{AgentType, GroupId, PolarizationAssessment};
use crate::protocol::{word_count, Conversation, DiscussionTrigger, Message, TurnBudget};
use crate::seed::SEED_MIX_DESCRIPTION;

use super::{ExperimentError, RunRecord, RunStatus};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLine {
    pub ts: String,
    pub run_id: String,
    #[serde(flatten)]
    pub event: SessionEvent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SessionEvent {
    RunStart {
        schema_version: u32,
        template_version: String,
        experiment: String,
        run_index: u64,
        seed: u64,
        seed_mix: String,
        conversation_id: ConversationId,
        agent_ids: Vec<AgentId>,
        groups: Vec<GroupId>,
        parties: BTreeMap<AgentId, String>,
        word_limit: u32,
        order: Vec<AgentId>,
        budget: TurnBudget,
        trigger: DiscussionTrigger,
    },
    Trigger {
        content: String,
    },
    QuestionnaireAnswer {
        phase: Phase,
        agent: AgentId,
        item_id: String,
        group: GroupId,
        kind: AffectKind,
        value: i64,
        raw: String,
        clamped: bool,
        attempts: u32,
    },
    Assessment {
        phase: Phase,
        agent: AgentId,
        in_group: Option<GroupId>,
        out_group: Option<GroupId>,
        polarized: bool,
        degree: Option<i64>,
        agent_type: AgentType,
    },
    Message {
        index: u64,
        author: AgentId,
        content: String,
        word_count: usize,
        over_limit: bool,
    },
    RunEnd {
        status: RunStatus,
        error: Option<String>,
    },
}

/// Timestamp source. `Logical` stamps line `n` of a file with the Unix epoch
/// plus `n` milliseconds, so logs of deterministic runs are byte-identical.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Clock {
    Logical,
    Wall,
}

pub struct SessionWriter {
    out: LineWriter<File>,
    path: PathBuf,
    run_id: String,
    clock: Clock,
    seq: i64,
}

impl SessionWriter {
    /// Creates (or truncates) the log file.
    pub fn create(path: &Path, run_id: &str, clock: Clock) -> Result<Self, ExperimentError> {
        let file = File::create(path).map_err(|e| io_err(path, e))?;
        Ok(Self {
            out: LineWriter::new(file),
            path: path.to_path_buf(),
            run_id: run_id.to_string(),
            clock,
            seq: 0,
        })
    }

    pub fn emit(&mut self, event: SessionEvent) -> Result<(), ExperimentError> {
        let ts = match self.clock {
            Clock::Logical => DateTime::<Utc>::from_timestamp_millis(self.seq)
                .expect("small offsets are valid timestamps"),
            Clock::Wall => Utc::now(),
        }
        .to_rfc3339_opts(SecondsFormat::Millis, true);
        self.seq += 1;
        let line = LogLine {
            ts,
            run_id: self.run_id.clone(),
            event,
        };
        let json = serde_json::to_string(&line).expect("log lines always serialize");
        writeln!(self.out, "{json}").map_err(|e| io_err(&self.path, e))
    }

    pub fn emit_all(
        &mut self,
        events: impl IntoIterator<Item = SessionEvent>,
    ) -> Result<(), ExperimentError> {
        events.into_iter().try_for_each(|e| self.emit(e))
    }

    pub fn finish(mut self) -> Result<PathBuf, ExperimentError> {
        self.out.flush().map_err(|e| io_err(&self.path, e))?;
        self.out
            .get_ref()
            .sync_all()
            .map_err(|e| io_err(&self.path, e))?;
        Ok(self.path)
    }
}

fn io_err(path: &Path, e: std::io::Error) -> ExperimentError {
    ExperimentError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

pub fn log_file_name(experiment: &str, run_id: &str) -> String {
    format!("{experiment}-{run_id}.log")
}

pub(super) fn start_event(record: &RunRecord) -> SessionEvent {
    SessionEvent::RunStart {
        schema_version: SCHEMA_VERSION,
        template_version: TEMPLATE_VERSION.to_string(),
        experiment: record.experiment.clone(),
        run_index: record.run_index,
        seed: record.seed,
        seed_mix: SEED_MIX_DESCRIPTION.to_string(),
        conversation_id: record.conversation.id.clone(),
        agent_ids: record.agent_ids.clone(),
        groups: record.groups.clone(),
        parties: record.parties.clone(),
        word_limit: record.word_limit,
        order: record.conversation.order.clone(),
        budget: record.conversation.budget,
        trigger: record.conversation.trigger.clone(),
    }
}

/// Answers then assessments for one phase, in agent-id order.
pub(super) fn phase_events(
    phase: Phase,
    states: &BTreeMap<AgentId, AffectiveState>,
    assessments: &BTreeMap<AgentId, PolarizationAssessment>,
) -> Vec<SessionEvent> {
    let answers = states.iter().flat_map(|(agent, state)| {
        state
            .answers
            .values()
            .map(move |a| SessionEvent::QuestionnaireAnswer {
                phase,
                agent: agent.clone(),
                item_id: a.item_id.clone(),
                group: a.group.clone(),
                kind: a.kind,
                value: a.value,
                raw: a.raw.clone(),
                clamped: a.clamped,
                attempts: a.attempts,
            })
    });
    let assessed = assessments
        .iter()
        .map(|(agent, a)| SessionEvent::Assessment {
            phase,
            agent: agent.clone(),
            in_group: a.in_group.clone(),
            out_group: a.out_group.clone(),
            polarized: a.polarized,
            degree: a.degree,
            agent_type: a.agent_type,
        });
    answers.chain(assessed).collect()
}

pub(super) fn message_event(message: &Message, word_limit: u32) -> SessionEvent {
    let words = word_count(&message.content);
    SessionEvent::Message {
        index: message.global_index,
        author: message
            .author
            .agent_id()
            .cloned()
            .expect("transcript messages are authored by agents"),
        content: message.content.clone(),
        word_count: words,
        over_limit: words > word_limit as usize,
    }
}

pub(super) fn end_event(record: &RunRecord) -> SessionEvent {
    SessionEvent::RunEnd {
        status: record.status,
        error: record.error.clone(),
    }
}

/// Full event sequence for a finished record.
pub(super) fn record_events(record: &RunRecord) -> Vec<SessionEvent> {
    let mut events = vec![start_event(record)];
    events.extend(phase_events(
        Phase::Pre,
        &record.pre_states,
        &record.assessments_pre,
    ));
    let opened = record.is_completed() || !record.conversation.transcript.is_empty();
    if opened {
        events.push(SessionEvent::Trigger {
            content: record.conversation.trigger.rendered.clone(),
        });
    }
    events.extend(
        record
            .conversation
            .transcript
            .iter()
            .map(|m| message_event(m, record.word_limit)),
    );
    events.extend(phase_events(
        Phase::Post,
        &record.post_states,
        &record.assessments_post,
    ));
    events.push(end_event(record));
    events
}

/// Writes `record` as a session log in `dir`, replacing any existing file.
pub fn persist_run(record: &RunRecord, dir: &Path) -> Result<PathBuf, ExperimentError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let path = dir.join(log_file_name(&record.experiment, &record.run_id));
    let mut writer = SessionWriter::create(&path, &record.run_id, Clock::Logical)?;
    writer.emit_all(record_events(record))?;
    writer.finish()
}

/// Loads every `*.log` file in `dir`, ordered by experiment then run index.
pub fn load_runs(dir: &Path) -> Result<Vec<RunRecord>, ExperimentError> {
    let entries = std::fs::read_dir(dir).map_err(|e| io_err(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| io_err(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "log") {
            paths.push(path);
        }
    }
    paths.sort();
    let mut records = paths
        .iter()
        .map(|p| load_run(p))
        .collect::<Result<Vec<_>, _>>()?;
    records.sort_by(|a, b| {
        (a.experiment.as_str(), a.run_index).cmp(&(b.experiment.as_str(), b.run_index))
    });
    Ok(records)
}

pub fn load_run(path: &Path) -> Result<RunRecord, ExperimentError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let corrupt = |line: usize, message: String| ExperimentError::CorruptLine {
        path: path.display().to_string(),
        line,
        message,
    };

    let lines: Vec<&str> = text.split_inclusive('\n').collect();
    let mut events = Vec::with_capacity(lines.len());
    let mut truncated = false;
    for (i, raw) in lines.iter().enumerate() {
        let line_no = i + 1;
        let is_last = line_no == lines.len();
        let body = raw.trim_end_matches(['\n', '\r']);
        if body.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<LogLine>(body) {
            Ok(l) => events.push(l.event),
            // An unterminated last line is a write cut short by a crash.
            Err(_) if is_last && !raw.ends_with('\n') => truncated = true,
            Err(e) => return Err(corrupt(line_no, e.to_string())),
        }
    }

    let mut events = events.into_iter();
    let mut record = match events.next() {
        Some(SessionEvent::RunStart {
            schema_version,
            experiment,
            run_index,
            seed,
            conversation_id,
            agent_ids,
            groups,
            parties,
            word_limit,
            order,
            budget,
            trigger,
            ..
        }) => {
            if schema_version != SCHEMA_VERSION {
                return Err(corrupt(
                    1,
                    format!("unsupported schema_version {schema_version}"),
                ));
            }
            RunRecord {
                experiment,
                run_id: super::run_id(run_index),
                run_index,
                seed,
                agent_ids,
                groups,
                parties,
                word_limit,
                conversation: Conversation {
                    id: conversation_id,
                    trigger,
                    order,
                    budget,
                    transcript: Vec::new(),
                },
                pre_states: BTreeMap::new(),
                post_states: BTreeMap::new(),
                assessments_pre: BTreeMap::new(),
                assessments_post: BTreeMap::new(),
                word_counts: Vec::new(),
                status: RunStatus::Aborted,
                error: None,
            }
        }
        _ => return Err(corrupt(1, "log does not open with run_start".into())),
    };

    let mut answers: BTreeMap<(Phase, AgentId), Vec<AnswerRecord>> = BTreeMap::new();
    let mut ended = false;
    for event in events {
        match event {
            SessionEvent::RunStart { .. } => {
                return Err(corrupt(0, "second run_start in one log".into()))
            }
            SessionEvent::Trigger { .. } => {}
            SessionEvent::QuestionnaireAnswer {
                phase,
                agent,
                item_id,
                group,
                kind,
                value,
                raw,
                clamped,
                attempts,
            } => answers
                .entry((phase, agent))
                .or_default()
                .push(AnswerRecord {
                    item_id,
                    group,
                    kind,
                    value,
                    raw,
                    clamped,
                    attempts,
                }),
            SessionEvent::Assessment {
                phase,
                agent,
                in_group,
                out_group,
                polarized,
                degree,
                agent_type,
            } => {
                let a = PolarizationAssessment {
                    in_group,
                    out_group,
                    polarized,
                    degree,
                    agent_type,
                };
                match phase {
                    Phase::Pre => record.assessments_pre.insert(agent, a),
                    Phase::Post => record.assessments_post.insert(agent, a),
                };
            }
            SessionEvent::Message {
                index,
                author,
                content,
                word_count,
                ..
            } => {
                record.conversation.transcript.push(Message {
                    conversation: record.conversation.id.clone(),
                    author: Author::Agent(author),
                    content,
                    global_index: index,
                });
                record.word_counts.push(word_count);
            }
            SessionEvent::RunEnd { status, error } => {
                record.status = status;
                record.error = error;
                ended = true;
            }
        }
    }
    for ((phase, agent), list) in answers {
        let state = AffectiveState::from_answers(phase, list);
        match phase {
            Phase::Pre => record.pre_states.insert(agent, state),
            Phase::Post => record.post_states.insert(agent, state),
        };
    }
    if !ended || truncated {
        record.status = RunStatus::Aborted;
        if record.error.is_none() {
            record.error = Some("session log ends before run_end".into());
        }
    }
    if !record.is_completed() {
        record.post_states.clear();
        record.assessments_post.clear();
    }
    Ok(record)
}
