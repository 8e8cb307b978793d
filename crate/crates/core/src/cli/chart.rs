//! SVG box/strip plot of per-party deltas, read from `deltas_raw.csv`.

use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};

const BOX_WIDTH: f64 = 160.0;
const HEIGHT: f64 = 420.0;
const TOP: f64 = 50.0;
const BOTTOM: f64 = 360.0;
const LEFT: f64 = 70.0;
const PALETTE: [&str; 4] = ["#c0392b", "#2e6da4", "#7d8c2b", "#8e44ad"];

struct Series {
    label: String,
    values: Vec<i64>,
}

/// Out-group warmth deltas per party when the table has any, else every
/// (party, target, kind) series.
fn load_series(table: &Path) -> Result<(String, Vec<Series>)> {
    let mut reader = csv::Reader::from_path(table)
        .with_context(|| format!("cannot read {}", table.display()))?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("{} has no {name} column", table.display()))
    };
    let (party, target, kind, delta) = (col("party")?, col("target")?, col("kind")?, col("delta")?);

    let mut all: BTreeMap<(String, String, String), Vec<i64>> = BTreeMap::new();
    for rec in reader.records() {
        let rec = rec?;
        let d: i64 = rec[delta]
            .parse()
            .with_context(|| format!("bad delta {:?} in {}", &rec[delta], table.display()))?;
        all.entry((
            rec[party].to_string(),
            rec[target].to_string(),
            rec[kind].to_string(),
        ))
        .or_default()
        .push(d);
    }
    let out_group: Vec<Series> = all
        .iter()
        .filter(|((p, t, k), _)| k == "warmth" && p != t && p != crate::experiment::UNALIGNED)
        .map(|((p, t, _), v)| Series {
            label: format!("{p}→{t}"),
            values: v.clone(),
        })
        .collect();
    if !out_group.is_empty() {
        return Ok(("Change in out-group warmth by party".into(), out_group));
    }
    let series = all
        .into_iter()
        .map(|((p, t, k), values)| Series {
            label: format!("{p}→{t} {k}"),
            values,
        })
        .collect();
    Ok(("Change in affect by party".into(), series))
}

fn median(sorted: &[i64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0
    }
}

/// Tukey hinges: medians of the lower and upper halves.
fn hinges(sorted: &[i64]) -> (f64, f64) {
    let n = sorted.len();
    if n == 1 {
        return (sorted[0] as f64, sorted[0] as f64);
    }
    let half = n.div_ceil(2);
    (median(&sorted[..half]), median(&sorted[n - half..]))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

pub fn render_from_table(table: &Path) -> Result<String> {
    let (title, series) = load_series(table)?;
    render(&title, &series)
}

fn render(title: &str, series: &[Series]) -> Result<String> {
    if series.is_empty() {
        bail!("no delta rows to chart");
    }
    let lo = series
        .iter()
        .flat_map(|s| &s.values)
        .min()
        .copied()
        .unwrap_or(0)
        .min(0);
    let hi = series
        .iter()
        .flat_map(|s| &s.values)
        .max()
        .copied()
        .unwrap_or(0)
        .max(0);
    let span = ((hi - lo) as f64).max(1.0);
    let pad = span * 0.08;
    let (lo_f, hi_f) = (lo as f64 - pad, hi as f64 + pad);
    let y = |v: f64| BOTTOM - (v - lo_f) / (hi_f - lo_f) * (BOTTOM - TOP);
    let width = LEFT + BOX_WIDTH * series.len() as f64 + 30.0;

    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{HEIGHT:.0}" viewBox="0 0 {width:.0} {HEIGHT:.0}" font-family="sans-serif" font-size="12">"#
    )?;
    writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#)?;
    writeln!(
        svg,
        r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        width / 2.0,
        escape(title)
    )?;

    // y axis with five ticks and a zero line
    writeln!(
        svg,
        r##"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{BOTTOM}" stroke="#333"/>"##
    )?;
    for i in 0..=4 {
        let v = lo_f + (hi_f - lo_f) * i as f64 / 4.0;
        let yy = y(v);
        writeln!(
            svg,
            r##"<line x1="{:.1}" y1="{yy:.1}" x2="{LEFT}" y2="{yy:.1}" stroke="#333"/><text x="{:.1}" y="{:.1}" text-anchor="end">{v:.1}</text>"##,
            LEFT - 5.0,
            LEFT - 8.0,
            yy + 4.0
        )?;
    }
    writeln!(
        svg,
        r##"<line x1="{LEFT}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#999" stroke-dasharray="4 3"/>"##,
        y(0.0),
        width - 20.0,
        y(0.0)
    )?;
    writeln!(
        svg,
        r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">delta (post - pre)</text>"#,
        (TOP + BOTTOM) / 2.0,
        (TOP + BOTTOM) / 2.0
    )?;

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let cx = LEFT + BOX_WIDTH * (i as f64 + 0.5);
        let mut sorted = s.values.clone();
        sorted.sort_unstable();
        let (q1, q3) = hinges(&sorted);
        let med = median(&sorted);
        let (min, max) = (sorted[0] as f64, sorted[sorted.len() - 1] as f64);
        let half = BOX_WIDTH * 0.22;

        writeln!(
            svg,
            r#"<line x1="{cx:.1}" y1="{:.1}" x2="{cx:.1}" y2="{:.1}" stroke="{color}"/>"#,
            y(max),
            y(q3)
        )?;
        writeln!(
            svg,
            r#"<line x1="{cx:.1}" y1="{:.1}" x2="{cx:.1}" y2="{:.1}" stroke="{color}"/>"#,
            y(q1),
            y(min)
        )?;
        writeln!(
            svg,
            r#"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="{color}" fill-opacity="0.15" stroke="{color}"/>"#,
            cx - half,
            y(q3),
            half * 2.0,
            (y(q1) - y(q3)).max(0.5)
        )?;
        writeln!(
            svg,
            r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{color}" stroke-width="2.5"/>"#,
            cx - half,
            y(med),
            cx + half,
            y(med)
        )?;
        // strip points, spread by a fixed pattern so output is reproducible
        for (k, v) in s.values.iter().enumerate() {
            let jitter = ((k * 37) % 21) as f64 / 20.0 - 0.5;
            writeln!(
                svg,
                r#"<circle cx="{:.1}" cy="{:.1}" r="2.5" fill="{color}" fill-opacity="0.6"/>"#,
                cx + jitter * half * 1.6,
                y(*v as f64)
            )?;
        }
        writeln!(
            svg,
            r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            BOTTOM + 20.0,
            escape(&s.label)
        )?;
        writeln!(
            svg,
            r##"<text x="{cx:.1}" y="{:.1}" text-anchor="middle" fill="#555">n={} median={med}</text>"##,
            BOTTOM + 38.0,
            s.values.len()
        )?;
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hinges_of_small_samples() {
        assert_eq!(hinges(&[1, 2, 3, 4]), (1.5, 3.5));
        assert_eq!(hinges(&[1, 2, 3, 4, 5]), (2.0, 4.0));
        assert_eq!(hinges(&[7]), (7.0, 7.0));
    }

    #[test]
    fn prefers_out_group_warmth_series() {
        let dir = tempfile::tempdir().unwrap();
        let table = dir.path().join("t.csv");
        std::fs::write(
            &table,
            "run_id,agent,party,target,kind,pre,post,delta\n\
             run-0000,d01,Democrat,Republican,warmth,30,35,5\n\
             run-0000,d01,Democrat,Democrat,warmth,80,80,0\n\
             run-0000,r01,Republican,Democrat,warmth,40,40,0\n",
        )
        .unwrap();
        let svg = render_from_table(&table).unwrap();
        assert!(svg.contains("Democrat→Republican"));
        assert!(svg.contains("Republican→Democrat"));
        assert!(!svg.contains("Democrat→Democrat"));
        assert_eq!(svg, render_from_table(&table).unwrap());
    }

    #[test]
    fn empty_table_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let table = dir.path().join("t.csv");
        std::fs::write(&table, "run_id,agent,party,target,kind,pre,post,delta\n").unwrap();
        assert!(render_from_table(&table).is_err());
    }
}
