//! Report tables written by `analyze` and `run --report`.
//!
//! Every cell is taken from a [`StudySummary`] field. Charts are rendered
//! from the written `deltas_raw.csv` table, never from session logs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use num_rational::Rational64;

use crate::experiment::StudySummary;
use crate::metrics::{aggregate_deltas, PolarizationAssessment};

use super::chart;

pub const DELTAS: &str = "deltas.csv";
pub const DELTAS_RAW: &str = "deltas_raw.csv";
pub const POLARIZATION: &str = "polarization.csv";
pub const SHARES: &str = "shares.csv";
pub const OVERVIEW: &str = "overview.csv";
pub const CHART: &str = "warmth_deltas.svg";

/// Files written for one report, in write order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportBundle {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
}

/// Exact signed rendering: `+5`, `0`, `-1`, `+2.5`. Values that are not
/// terminating decimals fall back to a fraction.
pub fn signed(r: Rational64) -> String {
    let sign = if *r.numer() > 0 { "+" } else { "" };
    if r.is_integer() {
        return format!("{sign}{}", r.to_integer());
    }
    let mut den = *r.denom();
    let (mut twos, mut fives) = (0u32, 0u32);
    while den % 2 == 0 {
        den /= 2;
        twos += 1;
    }
    while den % 5 == 0 {
        den /= 5;
        fives += 1;
    }
    if den != 1 {
        return format!("{sign}{}/{}", r.numer(), r.denom());
    }
    let places = twos.max(fives);
    let scaled = (r * Rational64::from_integer(10i64.pow(places))).to_integer();
    format!("{sign}{}", decimal(scaled, places))
}

/// Signed value rounded half away from zero to two decimals: `+6.36`.
pub fn signed_2dp(r: Rational64) -> String {
    let hundredths = (r * Rational64::from_integer(100)).round().to_integer();
    let sign = if hundredths > 0 { "+" } else { "" };
    format!("{sign}{}", decimal(hundredths, 2))
}

/// Unsigned two-decimal rendering for shares.
pub fn fixed_2dp(r: Rational64) -> String {
    decimal((r * Rational64::from_integer(100)).round().to_integer(), 2)
}

fn decimal(scaled: i64, places: u32) -> String {
    let unit = 10i64.pow(places);
    let neg = if scaled < 0 { "-" } else { "" };
    let a = scaled.unsigned_abs();
    let (whole, frac) = (a / unit as u64, a % unit as u64);
    format!("{neg}{whole}.{frac:0width$}", width = places as usize)
}

fn fraction(r: Rational64) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

/// One line per delta aggregate, e.g.
/// `Democrat→Republican warmth: median +5, mean +6.36 (n=77)`.
pub fn delta_table(summary: &StudySummary) -> String {
    let mut out = String::new();
    for row in &summary.delta_rows {
        out.push_str(&format!(
            "{}: median {}, mean {} (n={})\n",
            row.label(),
            signed(row.stats.median),
            signed_2dp(row.stats.mean),
            row.stats.n
        ));
    }
    out
}

/// Per-agent polarization degree change, aggregated across runs.
pub fn degree_table(summary: &StudySummary) -> String {
    let mut by_agent: BTreeMap<(&str, &str), Vec<i64>> = BTreeMap::new();
    for row in &summary.degree_rows {
        if let Some(d) = row.degree_delta() {
            by_agent
                .entry((row.agent.as_str(), row.party.as_str()))
                .or_default()
                .push(d);
        }
    }
    let mut out = String::new();
    for ((agent, party), deltas) in by_agent {
        let stats = aggregate_deltas(&deltas).expect("non-empty by construction");
        let runs = if stats.n == 1 { "run" } else { "runs" };
        out.push_str(&format!(
            "{agent} ({party}): degree change median {}, mean {} over {} {runs}\n",
            signed(stats.median),
            signed_2dp(stats.mean),
            stats.n
        ));
    }
    out
}

pub fn overview_line(summary: &StudySummary) -> String {
    format!(
        "{} completed, {} aborted runs; {} messages, median {} words/message, median {} words/run; {} over limit; {} clamped answers",
        summary.completed_runs,
        summary.aborted_runs,
        summary.words.messages,
        signed(summary.words.median_per_message).trim_start_matches('+'),
        signed(summary.words.median_per_run).trim_start_matches('+'),
        summary.words.over_limit,
        summary.clamped_answers,
    )
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(ToString::to_string).unwrap_or_default()
}

fn assessment_cells(a: &Option<PolarizationAssessment>) -> [String; 5] {
    match a {
        Some(a) => [
            opt(&a.in_group),
            opt(&a.out_group),
            a.polarized.to_string(),
            opt(&a.degree),
            a.agent_type.to_string(),
        ],
        None => Default::default(),
    }
}

fn write_table<H: AsRef<str>>(path: &Path, header: &[H], rows: Vec<Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .with_context(|| format!("cannot create {}", path.display()))?;
    w.write_record(header.iter().map(AsRef::as_ref))?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

/// Writes the report tables (and the chart when `charts` is set) into `dir`.
pub fn write_report(summary: &StudySummary, dir: &Path, charts: bool) -> Result<ReportBundle> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let mut files = Vec::new();

    let path = dir.join(DELTAS);
    write_table(
        &path,
        &[
            "party",
            "target",
            "kind",
            "n",
            "median",
            "mean",
            "mean_exact",
        ],
        summary
            .delta_rows
            .iter()
            .map(|r| {
                vec![
                    r.party.clone(),
                    r.target.to_string(),
                    r.kind.to_string(),
                    r.stats.n.to_string(),
                    signed(r.stats.median),
                    signed_2dp(r.stats.mean),
                    fraction(r.stats.mean),
                ]
            })
            .collect(),
    )?;
    files.push(path);

    let path = dir.join(DELTAS_RAW);
    write_table(
        &path,
        &[
            "run_id", "agent", "party", "target", "kind", "pre", "post", "delta",
        ],
        summary
            .delta_samples
            .iter()
            .map(|s| {
                vec![
                    s.run_id.clone(),
                    s.agent.to_string(),
                    s.party.clone(),
                    s.target.to_string(),
                    s.kind.to_string(),
                    s.pre.to_string(),
                    s.post.to_string(),
                    s.delta.to_string(),
                ]
            })
            .collect(),
    )?;
    files.push(path);

    let path = dir.join(POLARIZATION);
    let mut header: Vec<String> = vec!["run_id".into(), "agent".into(), "party".into()];
    for phase in ["pre", "post"] {
        for col in ["in_group", "out_group", "polarized", "degree", "type"] {
            header.push(format!("{phase}_{col}"));
        }
    }
    header.push("degree_delta".into());
    write_table(
        &path,
        &header,
        summary
            .degree_rows
            .iter()
            .map(|r| {
                let mut row = vec![r.run_id.clone(), r.agent.to_string(), r.party.clone()];
                row.extend(assessment_cells(&r.pre));
                row.extend(assessment_cells(&r.post));
                row.push(
                    r.degree_delta()
                        .map(|d| signed(d.into()))
                        .unwrap_or_default(),
                );
                row
            })
            .collect(),
    )?;
    files.push(path);

    let path = dir.join(SHARES);
    let mut rows = Vec::new();
    if let Some(a) = &summary.adoption {
        for (group, share) in &a.in_group {
            rows.push(vec![
                "in_group".into(),
                group.to_string(),
                a.n.to_string(),
                fixed_2dp(*share),
                fraction(*share),
            ]);
        }
        rows.push(vec![
            "polarized".into(),
            String::new(),
            a.n.to_string(),
            fixed_2dp(a.polarized),
            fraction(a.polarized),
        ]);
    }
    write_table(
        &path,
        &["measure", "group", "n", "share", "share_exact"],
        rows,
    )?;
    files.push(path);

    let path = dir.join(OVERVIEW);
    let w = &summary.words;
    let plain = |r: Rational64| signed(r).trim_start_matches('+').to_string();
    write_table(
        &path,
        &["metric", "value"],
        [
            ("completed_runs", summary.completed_runs.to_string()),
            ("aborted_runs", summary.aborted_runs.to_string()),
            ("clamped_answers", summary.clamped_answers.to_string()),
            ("messages", w.messages.to_string()),
            ("total_words", w.total_words.to_string()),
            ("median_words_per_message", plain(w.median_per_message)),
            ("median_words_per_run", plain(w.median_per_run)),
            ("over_limit_messages", w.over_limit.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| vec![k.to_string(), v])
        .collect(),
    )?;
    files.push(path);

    if charts {
        let table = dir.join(DELTAS_RAW);
        let svg = chart::render_from_table(&table)?;
        let path = dir.join(CHART);
        std::fs::write(&path, svg).with_context(|| format!("cannot write {}", path.display()))?;
        files.push(path);
    }

    Ok(ReportBundle {
        dir: dir.to_path_buf(),
        files,
    })
}
