//! Batch experiments: agent ingestion, seeded runs, session logs, summaries.

mod ingest;
mod runner;
mod sampling;
mod session;
mod spec;
mod summary;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::affect::AffectiveState;
use crate::agent::AgentId;
use crate::metrics::{GroupId, PolarizationAssessment};
use crate::protocol::Conversation;

pub use ingest::{load_agents, parse_agents, IngestError, REQUIRED_COLUMNS};
pub use runner::{
    party_label, run_experiment, run_prepared, PreparedExperiment, RunOutcome, UNALIGNED,
};
pub use sampling::{sample_demographics, InvalidDistribution};
pub use session::{
    load_run, load_runs, log_file_name, persist_run, Clock, LogLine, SessionEvent, SessionWriter,
    SCHEMA_VERSION,
};
pub use spec::{ExperimentSpec, OrderPolicySpec, Pairing, QuestionnaireFiles, TriggerSpec};
pub use summary::{summarize, DegreeRow, DeltaRow, DeltaSample, StudySummary, WordStats};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{path}: line {line} is corrupt: {message}")]
    CorruptLine {
        path: String,
        line: usize,
        message: String,
    },
    #[error("no completed runs to summarize")]
    EmptySample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Aborted,
}

/// Outcome of one run. `post_states` and `assessments_post` are empty
/// unless the run completed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunRecord {
    pub experiment: String,
    pub run_id: String,
    pub run_index: u64,
    pub seed: u64,
    pub agent_ids: Vec<AgentId>,
    pub groups: Vec<GroupId>,
    /// Party label per agent, used to group deltas in summaries.
    pub parties: BTreeMap<AgentId, String>,
    pub word_limit: u32,
    pub conversation: Conversation,
    pub pre_states: BTreeMap<AgentId, AffectiveState>,
    pub post_states: BTreeMap<AgentId, AffectiveState>,
    pub assessments_pre: BTreeMap<AgentId, PolarizationAssessment>,
    pub assessments_post: BTreeMap<AgentId, PolarizationAssessment>,
    pub word_counts: Vec<usize>,
    pub status: RunStatus,
    pub error: Option<String>,
}

impl RunRecord {
    pub fn is_completed(&self) -> bool {
        self.status == RunStatus::Completed
    }

    pub fn over_limit_messages(&self) -> usize {
        self.word_counts
            .iter()
            .filter(|w| **w > self.word_limit as usize)
            .count()
    }
}

pub fn run_id(run_index: u64) -> String {
    format!("run-{run_index:04}")
}
