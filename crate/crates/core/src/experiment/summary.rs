use std::collections::BTreeMap;

use num_rational::Rational64;

use crate::affect::{delta, AffectKind};
use crate::agent::AgentId;
use crate::metrics::{
    adoption_shares, aggregate_deltas, AdoptionShares, AgentType, DeltaStats, GroupId,
    PolarizationAssessment,
};

use super::{ExperimentError, RunRecord};

/// One agent's pre/post change on one (group, kind) key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeltaSample {
    pub run_id: String,
    pub agent: AgentId,
    pub party: String,
    pub target: GroupId,
    pub kind: AffectKind,
    pub pre: i64,
    pub post: i64,
    pub delta: i64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeltaRow {
    pub party: String,
    pub target: GroupId,
    pub kind: AffectKind,
    pub stats: DeltaStats,
}

impl DeltaRow {
    pub fn label(&self) -> String {
        format!("{}→{} {}", self.party, self.target, self.kind)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DegreeRow {
    pub run_id: String,
    pub agent: AgentId,
    pub party: String,
    pub pre: Option<PolarizationAssessment>,
    pub post: Option<PolarizationAssessment>,
}

impl DegreeRow {
    pub fn degree_delta(&self) -> Option<i64> {
        Some(self.post.as_ref()?.degree? - self.pre.as_ref()?.degree?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordStats {
    pub messages: usize,
    pub total_words: usize,
    pub median_per_message: Rational64,
    pub median_per_run: Rational64,
    pub over_limit: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StudySummary {
    pub completed_runs: usize,
    pub aborted_runs: usize,
    pub clamped_answers: usize,
    /// Sorted by party, target group, kind.
    pub delta_rows: Vec<DeltaRow>,
    pub delta_samples: Vec<DeltaSample>,
    pub degree_rows: Vec<DegreeRow>,
    pub words: WordStats,
    /// Post-conversation shares among agents that were non-partisan before
    /// it; `None` when there were no such agents.
    pub adoption: Option<AdoptionShares>,
}

/// Study-level statistics over completed runs. Aborted runs are only counted.
pub fn summarize(records: &[RunRecord]) -> Result<StudySummary, ExperimentError> {
    let completed: Vec<&RunRecord> = records.iter().filter(|r| r.is_completed()).collect();
    if completed.is_empty() {
        return Err(ExperimentError::EmptySample);
    }

    let mut samples = Vec::new();
    let mut degree_rows = Vec::new();
    let mut focal_post = Vec::new();
    let mut clamped_answers = 0;
    let mut per_message = Vec::new();
    let mut per_run = Vec::new();
    let mut over_limit = 0;
    let mut universe: Vec<GroupId> = Vec::new();

    for r in &completed {
        for g in &r.groups {
            if !universe.contains(g) {
                universe.push(g.clone());
            }
        }
        for state in r.pre_states.values().chain(r.post_states.values()) {
            clamped_answers += state.clamp_count();
        }
        per_message.extend(r.word_counts.iter().map(|w| *w as i64));
        per_run.push(r.word_counts.iter().sum::<usize>() as i64);
        over_limit += r.over_limit_messages();

        for agent in &r.agent_ids {
            let party = r.parties.get(agent).cloned().unwrap_or_default();
            if let (Some(pre), Some(post)) = (r.pre_states.get(agent), r.post_states.get(agent)) {
                let d = delta(pre, post).map_err(|e| {
                    ExperimentError::Config(format!("{} agent {agent}: {e}", r.run_id))
                })?;
                for (key, change) in d {
                    samples.push(DeltaSample {
                        run_id: r.run_id.clone(),
                        agent: agent.clone(),
                        party: party.clone(),
                        pre: pre.scores[&key],
                        post: post.scores[&key],
                        target: key.group,
                        kind: key.kind,
                        delta: change,
                    });
                }
            }
            let pre_a = r.assessments_pre.get(agent).cloned();
            let post_a = r.assessments_post.get(agent).cloned();
            if let (Some(pre), Some(post)) = (&pre_a, &post_a) {
                if pre.agent_type == AgentType::NonPartisan {
                    focal_post.push(post.clone());
                }
            }
            if pre_a.is_some() || post_a.is_some() {
                degree_rows.push(DegreeRow {
                    run_id: r.run_id.clone(),
                    agent: agent.clone(),
                    party,
                    pre: pre_a,
                    post: post_a,
                });
            }
        }
    }

    let mut grouped: BTreeMap<(String, GroupId, AffectKind), Vec<i64>> = BTreeMap::new();
    for s in &samples {
        grouped
            .entry((s.party.clone(), s.target.clone(), s.kind))
            .or_default()
            .push(s.delta);
    }
    let delta_rows = grouped
        .into_iter()
        .map(|((party, target, kind), values)| DeltaRow {
            party,
            target,
            kind,
            stats: aggregate_deltas(&values).expect("groups are non-empty"),
        })
        .collect();

    let median = |v: &[i64]| {
        aggregate_deltas(v)
            .map(|s| s.median)
            .unwrap_or_else(|_| Rational64::from_integer(0))
    };
    let words = WordStats {
        messages: per_message.len(),
        total_words: per_message.iter().sum::<i64>() as usize,
        median_per_message: median(&per_message),
        median_per_run: median(&per_run),
        over_limit,
    };

    let adoption = if focal_post.is_empty() {
        None
    } else {
        Some(adoption_shares(&focal_post, &universe).expect("focal sample is non-empty"))
    };

    Ok(StudySummary {
        completed_runs: completed.len(),
        aborted_runs: records.len() - completed.len(),
        clamped_answers,
        delta_rows,
        delta_samples: samples,
        degree_rows,
        words,
        adoption,
    })
}
