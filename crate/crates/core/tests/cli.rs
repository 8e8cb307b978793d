mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::*;

fn polarsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polarsim"))
        .args(args)
        .env_remove("POLARSIM_API_KEY")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn preset_file(name: &str) -> String {
    presets().join(format!("{name}.toml")).display().to_string()
}

#[test]
fn validate_counts_fixture_agents() {
    let o = polarsim(&[
        "validate",
        p(&presets().join("agents/cross_partisan_154.csv")),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o), "154 agents\n");
}

#[test]
fn validate_reports_bad_files() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    std::fs::write(
        &missing,
        "persona_description,demographics,is_observer\nP,D,false\n",
    )
    .unwrap();
    let o = polarsim(&["validate", p(&missing)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(
        stderr(&o).contains("missing column political_standpoint"),
        "{}",
        stderr(&o)
    );

    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "").unwrap();
    let o = polarsim(&["validate", p(&empty)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no data rows"));

    let bad_row = dir.path().join("bad.csv");
    std::fs::write(
        &bad_row,
        "persona_description,demographics,political_standpoint,is_observer\nP,D,S,false\nP,D,S,maybe\n",
    )
    .unwrap();
    let o = polarsim(&["validate", p(&bad_row)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(
        stderr(&o).contains("row 2, column is_observer"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn run_twice_gives_identical_directories() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let o = polarsim(&[
            "run",
            "--config",
            &preset_file("exp3_extremist"),
            "--backend",
            "scripted",
            "--seed",
            "7",
            "--out",
            p(&dir.path().join("logs")),
            "--report",
            p(&dir.path().join("report")),
            "--charts",
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        assert!(
            stdout(&o).contains("1 runs, 1 completed, 0 aborted"),
            "{}",
            stdout(&o)
        );
    }
    for sub in ["logs", "report"] {
        let files = |d: &Path| {
            let mut v: Vec<_> = std::fs::read_dir(d.join(sub))
                .unwrap()
                .map(|e| {
                    let e = e.unwrap();
                    (e.file_name(), std::fs::read(e.path()).unwrap())
                })
                .collect();
            v.sort();
            v
        };
        assert_eq!(files(a.path()), files(b.path()), "{sub} differs");
    }
    assert!(a.path().join("report/warmth_deltas.svg").exists());
}

#[test]
fn unknown_backend_is_a_usage_error() {
    let o = polarsim(&[
        "run",
        "--config",
        &preset_file("exp3_extremist"),
        "--backend",
        "quantum",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("quantum"), "{}", stderr(&o));
}

#[test]
fn remote_backend_without_key_fails_before_any_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("logs");
    let o = polarsim(&[
        "run",
        "--config",
        &preset_file("exp3_extremist"),
        "--backend",
        "remote",
        "--out",
        p(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("POLARSIM_API_KEY"), "{}", stderr(&o));
    assert!(!out.exists(), "no run may start");
}

#[test]
fn missing_config_is_a_config_error() {
    let o = polarsim(&["run", "--config", "/nonexistent/spec.toml"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn analyze_exp3_shows_degree_changes_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let logs = dir.path().join("logs");
    run(preset("exp3_extremist", &logs));
    let mut outputs = Vec::new();
    for name in ["r1", "r2"] {
        let report = dir.path().join(name);
        let o = polarsim(&[
            "analyze",
            "--sessions",
            p(&logs),
            "--report",
            p(&report),
            "--charts",
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let out = stdout(&o);
        assert!(
            out.contains("m01 (Republican): degree change median +2"),
            "{out}"
        );
        assert!(
            out.contains("m02 (Republican): degree change median +2"),
            "{out}"
        );
        assert!(
            out.contains("m03 (Republican): degree change median 0"),
            "{out}"
        );
        assert!(
            out.contains("Republican→Republican love: median +1"),
            "{out}"
        );
        let mut files: Vec<_> = std::fs::read_dir(&report)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (e.file_name(), std::fs::read(e.path()).unwrap())
            })
            .collect();
        files.sort();
        outputs.push(files);
    }
    assert_eq!(outputs[0].len(), 6);
    assert_eq!(outputs[0], outputs[1]);
    let polarization = std::fs::read_to_string(dir.path().join("r1/polarization.csv")).unwrap();
    assert!(polarization
        .lines()
        .any(|l| l.starts_with("run-0000,m01,") && l.ends_with(",+2")));
    assert!(polarization
        .lines()
        .any(|l| l.starts_with("run-0000,m03,") && l.ends_with(",0")));
}

#[test]
fn analyze_cross_partisan_table() {
    let dir = tempfile::tempdir().unwrap();
    let logs = dir.path().join("logs");
    run(preset("cross_partisan_nonpolitical", &logs));
    let report = dir.path().join("report");
    let o = polarsim(&["analyze", "--sessions", p(&logs), "--report", p(&report)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(
        out.contains("Democrat→Republican warmth: median +5, mean +6.36 (n=77)"),
        "{out}"
    );
    assert!(
        out.contains("Republican→Democrat warmth: median 0, mean +0.97 (n=77)"),
        "{out}"
    );
    assert!(
        out.contains("median 29 words/message, median 279 words/run"),
        "{out}"
    );
    let deltas = std::fs::read_to_string(report.join("deltas.csv")).unwrap();
    assert!(
        deltas.contains("Democrat,Republican,warmth,77,+5,+6.36,70/11"),
        "{deltas}"
    );
    assert!(
        !report.join("warmth_deltas.svg").exists(),
        "charts are opt-in"
    );
}

#[test]
fn analyze_only_aborted_runs_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let logs = dir.path().join("logs");
    run(preset("exp3_extremist", &logs));
    let log = logs.join("exp3_extremist-run-0000.log");
    let text = std::fs::read_to_string(&log).unwrap();
    let kept: Vec<&str> = text
        .lines()
        .filter(|l| !l.contains("\"run_end\""))
        .collect();
    std::fs::write(&log, kept.join("\n") + "\n").unwrap();
    let o = polarsim(&[
        "analyze",
        "--sessions",
        p(&logs),
        "--report",
        p(&dir.path().join("r")),
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("no completed runs"));
}

#[test]
fn run_with_aborted_runs_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("agents.csv"),
        "id,persona_description,demographics,political_standpoint,is_observer\na,P.,D.,You are a Democrat.,false\n",
    )
    .unwrap();
    // one reply for a two-round budget
    std::fs::write(
        dir.path().join("scenario.toml"),
        "replies = [\"hello\"]\nanswers = { warmth_republicans = [\"40\"], warmth_democrats = [\"60\"] }\n",
    )
    .unwrap();
    let spec = dir.path().join("spec.toml");
    std::fs::write(
        &spec,
        format!(
            "name = \"short\"\nagents_file = \"agents.csv\"\ngroups = [\"Republican\", \"Democrat\"]\n\
             runs = 1\nrounds = 2\nword_limit = 10\nmaster_seed = 1\noutput_dir = \"{}\"\n\
             order_policy = {{ kind = \"fixed\" }}\n[trigger]\ntopic = \"Parks\"\n\
             [questionnaires]\npre = \"{}\"\n[backend]\nkind = \"scripted\"\nscenario = \"scenario.toml\"\n",
            dir.path().join("logs").display(),
            presets().join("questionnaires/thermometer.toml").display()
        ),
    )
    .unwrap();
    let o = polarsim(&["run", "--config", p(&spec)]);
    assert_eq!(o.status.code(), Some(1), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("ABORTED"), "{}", stdout(&o));
}
