//! Polarization metrics over love/hate scores.
//!
//! * in-group: the unique group with love at least `in_group_min_love` and
//!   strictly above every other group's love;
//! * out-group: among the remaining groups with love below
//!   `in_group_min_love`, the least loved (ties: most hated, then by id);
//! * polarized: both exist and hate toward the out-group is strictly above
//!   `polarized_hate_threshold`;
//! * degree: love(in-group) + hate(out-group), undefined without both;
//! * type: non-partisan without an in-group, extremist when love(in) and
//!   hate(out) both reach `extremist_cutoff`, partisan otherwise.

use std::collections::BTreeMap;
use std::fmt;

use num_rational::Rational64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::affect::{AffectKind, AffectiveState};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct GroupId(String);

impl GroupId {
    pub fn new(value: impl Into<String>) -> Result<Self, MetricsError> {
        let value = value.into();
        if value.trim().is_empty() {
            return Err(MetricsError::EmptyGroupId);
        }
        Ok(Self(value))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for GroupId {
    type Error = MetricsError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        GroupId::new(value)
    }
}

impl From<GroupId> for String {
    fn from(g: GroupId) -> Self {
        g.0
    }
}

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("group id must not be empty")]
    EmptyGroupId,
    #[error("a group universe needs at least two groups, got {0}")]
    TooFewGroups(usize),
    #[error("{kind} score for {group} is {value}, outside 0-10")]
    OutOfRange {
        group: GroupId,
        kind: AffectKind,
        value: i64,
    },
    #[error("missing {kind} score for {group}")]
    MissingScore { group: GroupId, kind: AffectKind },
    #[error("threshold {0} outside 0-10")]
    InvalidThreshold(i64),
    #[error("empty sample")]
    EmptySample,
}

const SCORE_MAX: i64 = 10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupScores {
    love: BTreeMap<GroupId, i64>,
    hate: BTreeMap<GroupId, i64>,
}

impl GroupScores {
    /// `entries` are `(group, love, hate)` triples over the whole universe.
    pub fn new(
        entries: impl IntoIterator<Item = (GroupId, i64, i64)>,
    ) -> Result<Self, MetricsError> {
        let mut love = BTreeMap::new();
        let mut hate = BTreeMap::new();
        for (g, l, h) in entries {
            for (kind, v) in [(AffectKind::Love, l), (AffectKind::Hate, h)] {
                if !(0..=SCORE_MAX).contains(&v) {
                    return Err(MetricsError::OutOfRange {
                        group: g.clone(),
                        kind,
                        value: v,
                    });
                }
            }
            love.insert(g.clone(), l);
            hate.insert(g, h);
        }
        if love.len() < 2 {
            return Err(MetricsError::TooFewGroups(love.len()));
        }
        Ok(Self { love, hate })
    }

    /// Pulls love and hate scores for every group in `universe` out of a
    /// measured state.
    pub fn from_state(state: &AffectiveState, universe: &[GroupId]) -> Result<Self, MetricsError> {
        let mut entries = Vec::with_capacity(universe.len());
        for g in universe {
            let get = |kind| {
                state.score(g, kind).ok_or(MetricsError::MissingScore {
                    group: g.clone(),
                    kind,
                })
            };
            entries.push((g.clone(), get(AffectKind::Love)?, get(AffectKind::Hate)?));
        }
        Self::new(entries)
    }

    pub fn love(&self, g: &GroupId) -> i64 {
        self.love[g]
    }

    pub fn hate(&self, g: &GroupId) -> i64 {
        self.hate[g]
    }

    pub fn groups(&self) -> impl Iterator<Item = &GroupId> {
        self.love.keys()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricThresholds {
    pub in_group_min_love: i64,
    pub polarized_hate_threshold: i64,
    pub extremist_cutoff: i64,
}

impl Default for MetricThresholds {
    fn default() -> Self {
        Self {
            in_group_min_love: 5,
            polarized_hate_threshold: 5,
            extremist_cutoff: 9,
        }
    }
}

impl MetricThresholds {
    pub fn validate(&self) -> Result<(), MetricsError> {
        for v in [
            self.in_group_min_love,
            self.polarized_hate_threshold,
            self.extremist_cutoff,
        ] {
            if !(0..=SCORE_MAX).contains(&v) {
                return Err(MetricsError::InvalidThreshold(v));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentType {
    NonPartisan,
    Extremist,
    Partisan,
}

impl fmt::Display for AgentType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AgentType::NonPartisan => "non_partisan",
            AgentType::Extremist => "extremist",
            AgentType::Partisan => "partisan",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolarizationAssessment {
    pub in_group: Option<GroupId>,
    pub out_group: Option<GroupId>,
    pub polarized: bool,
    pub degree: Option<i64>,
    pub agent_type: AgentType,
}

pub fn classify_in_group(scores: &GroupScores, t: &MetricThresholds) -> Option<GroupId> {
    let (best, best_love) = scores.love.iter().max_by_key(|(_, l)| **l)?;
    let tied = scores.love.values().filter(|l| *l == best_love).count() > 1;
    (*best_love >= t.in_group_min_love && !tied).then(|| best.clone())
}

pub fn classify_out_group(
    scores: &GroupScores,
    in_group: Option<&GroupId>,
    t: &MetricThresholds,
) -> Option<GroupId> {
    let in_group = in_group?;
    scores
        .love
        .iter()
        .filter(|(g, l)| *g != in_group && **l < t.in_group_min_love)
        // min love, then max hate, then smallest id
        .min_by(|(ga, la), (gb, lb)| {
            la.cmp(lb)
                .then_with(|| scores.hate[*gb].cmp(&scores.hate[*ga]))
                .then_with(|| ga.cmp(gb))
        })
        .map(|(g, _)| g.clone())
}

fn groups(scores: &GroupScores, t: &MetricThresholds) -> Option<(GroupId, GroupId)> {
    let in_group = classify_in_group(scores, t)?;
    let out_group = classify_out_group(scores, Some(&in_group), t)?;
    Some((in_group, out_group))
}

pub fn is_polarized(scores: &GroupScores, t: &MetricThresholds) -> bool {
    groups(scores, t).is_some_and(|(_, out)| scores.hate(&out) > t.polarized_hate_threshold)
}

pub fn polarization_degree(scores: &GroupScores, t: &MetricThresholds) -> Option<i64> {
    groups(scores, t).map(|(i, o)| scores.love(&i) + scores.hate(&o))
}

pub fn agent_type(scores: &GroupScores, t: &MetricThresholds) -> AgentType {
    if classify_in_group(scores, t).is_none() {
        return AgentType::NonPartisan;
    }
    match groups(scores, t) {
        Some((i, o))
            if scores.love(&i) >= t.extremist_cutoff && scores.hate(&o) >= t.extremist_cutoff =>
        {
            AgentType::Extremist
        }
        _ => AgentType::Partisan,
    }
}

pub fn assess(scores: &GroupScores, t: &MetricThresholds) -> PolarizationAssessment {
    let in_group = classify_in_group(scores, t);
    let out_group = classify_out_group(scores, in_group.as_ref(), t);
    PolarizationAssessment {
        polarized: is_polarized(scores, t),
        degree: polarization_degree(scores, t),
        agent_type: agent_type(scores, t),
        in_group,
        out_group,
    }
}

/// Exact summary statistics of a list of integer deltas.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeltaStats {
    pub n: usize,
    pub median: Rational64,
    pub mean: Rational64,
}

pub fn aggregate_deltas(deltas: &[i64]) -> Result<DeltaStats, MetricsError> {
    if deltas.is_empty() {
        return Err(MetricsError::EmptySample);
    }
    let mut sorted = deltas.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    let median = if n % 2 == 1 {
        Rational64::from_integer(sorted[n / 2])
    } else {
        Rational64::new(sorted[n / 2 - 1] + sorted[n / 2], 2)
    };
    let sum: i64 = sorted.iter().sum();
    Ok(DeltaStats {
        n,
        median,
        mean: Rational64::new(sum, n as i64),
    })
}

/// Share of focal agents holding each in-group, and share polarized, after
/// the conversation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdoptionShares {
    pub n: usize,
    pub in_group: BTreeMap<GroupId, Rational64>,
    pub polarized: Rational64,
}

/// `post` holds the post-conversation assessments of agents that were
/// non-partisan before it.
pub fn adoption_shares(
    post: &[PolarizationAssessment],
    universe: &[GroupId],
) -> Result<AdoptionShares, MetricsError> {
    if post.is_empty() {
        return Err(MetricsError::EmptySample);
    }
    let n = post.len() as i64;
    let in_group = universe
        .iter()
        .map(|g| {
            let k = post
                .iter()
                .filter(|a| a.in_group.as_ref() == Some(g))
                .count() as i64;
            (g.clone(), Rational64::new(k, n))
        })
        .collect();
    let polarized = post.iter().filter(|a| a.polarized).count() as i64;
    Ok(AdoptionShares {
        n: post.len(),
        in_group,
        polarized: Rational64::new(polarized, n),
    })
}
