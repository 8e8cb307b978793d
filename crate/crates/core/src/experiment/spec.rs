//! Experiment specification files (TOML).
//!
//! Input paths (agents, questionnaires, scenario) are relative to the spec
//! file. `output_dir` is relative to the working directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::backend::{BackendConfig, BackendKind};
use crate::metrics::{GroupId, MetricThresholds};
use crate::protocol::{TurnBudget, TurnOrderPolicy};

use super::ExperimentError;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriggerSpec {
    pub topic: String,
    #[serde(default)]
    pub context: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OrderPolicySpec {
    Fixed,
    AlternateStarter,
    /// Seed defaults to the master seed.
    Randomized {
        #[serde(default)]
        seed: Option<u64>,
    },
}

/// How agents are grouped into per-run sets.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Pairing {
    /// Every run uses every agent.
    All,
    /// Run `i` uses `groups[i % groups.len()]`.
    RunGroups { groups: Vec<Vec<String>> },
    /// Agents are shuffled once with the master seed and cut into disjoint
    /// sets of `size`; run `i` uses set `i % sets`. Leftover agents sit out.
    Draw { size: usize },
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuestionnaireFiles {
    pub pre: PathBuf,
    /// Defaults to `pre`.
    #[serde(default)]
    pub post: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecFile {
    name: String,
    agents_file: PathBuf,
    groups: Vec<GroupId>,
    trigger: TriggerSpec,
    runs: u64,
    #[serde(default)]
    rounds: Option<u32>,
    #[serde(default)]
    messages_per_run: Option<u32>,
    word_limit: u32,
    order_policy: OrderPolicySpec,
    questionnaires: QuestionnaireFiles,
    backend: BackendConfig,
    master_seed: u64,
    output_dir: PathBuf,
    #[serde(default = "default_pairing")]
    pairing: Pairing,
    #[serde(default)]
    parties: BTreeMap<String, String>,
    #[serde(default = "default_workers")]
    workers: usize,
    #[serde(default)]
    thresholds: Option<MetricThresholds>,
}

fn default_pairing() -> Pairing {
    Pairing::All
}

fn default_workers() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub name: String,
    pub agents_file: PathBuf,
    pub groups: Vec<GroupId>,
    pub trigger: TriggerSpec,
    pub runs: u64,
    pub budget: TurnBudget,
    pub word_limit: u32,
    pub order_policy: OrderPolicySpec,
    pub pre_questionnaire: PathBuf,
    pub post_questionnaire: PathBuf,
    pub backend: BackendConfig,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    pub pairing: Pairing,
    /// Explicit party labels by agent id; other agents are labelled from
    /// their political standpoint.
    pub parties: BTreeMap<String, String>,
    pub workers: usize,
    pub thresholds: MetricThresholds,
}

impl ExperimentSpec {
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExperimentError::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ExperimentError> {
        let raw: SpecFile = toml::from_str(text)
            .map_err(|e| ExperimentError::Config(format!("invalid experiment file: {e}")))?;
        let budget = match (raw.rounds, raw.messages_per_run) {
            (Some(r), None) => TurnBudget::Rounds(r),
            (None, Some(m)) => TurnBudget::Messages(m),
            _ => {
                return Err(ExperimentError::Config(
                    "set exactly one of rounds or messages_per_run".into(),
                ))
            }
        };
        let mut backend = raw.backend;
        backend.scenario = backend
            .scenario
            .map(|s| base_dir.join(s).display().to_string());
        let pre = base_dir.join(&raw.questionnaires.pre);
        let post = raw
            .questionnaires
            .post
            .map(|p| base_dir.join(p))
            .unwrap_or_else(|| pre.clone());
        let spec = Self {
            name: raw.name,
            agents_file: base_dir.join(raw.agents_file),
            groups: raw.groups,
            trigger: raw.trigger,
            runs: raw.runs,
            budget,
            word_limit: raw.word_limit,
            order_policy: raw.order_policy,
            pre_questionnaire: pre,
            post_questionnaire: post,
            backend,
            master_seed: raw.master_seed,
            output_dir: raw.output_dir,
            pairing: raw.pairing,
            parties: raw.parties,
            workers: raw.workers,
            thresholds: raw.thresholds.unwrap_or_default(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let fail = |m: &str| Err(ExperimentError::Config(m.to_string()));
        if self.name.trim().is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        {
            return fail("name must be non-empty and use only [A-Za-z0-9_-]");
        }
        if self.runs == 0 {
            return fail("runs must be at least 1");
        }
        if self.word_limit == 0 {
            return fail("word_limit must be at least 1");
        }
        match self.budget {
            TurnBudget::Rounds(0) | TurnBudget::Messages(0) => {
                return fail("rounds / messages_per_run must be positive")
            }
            _ => {}
        }
        if self.groups.is_empty() {
            return fail("groups must list at least one group");
        }
        let mut g = self.groups.clone();
        g.sort();
        g.dedup();
        if g.len() != self.groups.len() {
            return fail("groups must be unique");
        }
        if self.workers == 0 {
            return fail("workers must be at least 1");
        }
        if self.trigger.topic.trim().is_empty() {
            return fail("trigger topic must not be empty");
        }
        match &self.pairing {
            Pairing::RunGroups { groups }
                if groups.is_empty() || groups.iter().any(Vec::is_empty) =>
            {
                return fail("run_groups pairing needs non-empty groups")
            }
            Pairing::Draw { size: 0 } => return fail("draw pairing size must be positive"),
            _ => {}
        }
        self.thresholds
            .validate()
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
        self.backend.validate().map_err(ExperimentError::Config)
    }

    pub fn turn_policy(&self) -> TurnOrderPolicy {
        match self.order_policy {
            OrderPolicySpec::Fixed => TurnOrderPolicy::Fixed,
            OrderPolicySpec::AlternateStarter => TurnOrderPolicy::AlternateStarter,
            OrderPolicySpec::Randomized { seed } => TurnOrderPolicy::Randomized {
                seed: seed.unwrap_or(self.master_seed),
            },
        }
    }

    /// Switches the backend kind, e.g. from a command-line override.
    pub fn set_backend_kind(&mut self, kind: BackendKind) {
        self.backend.kind = kind;
    }
}
