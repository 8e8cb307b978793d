//! Command-line interface: `validate`, `run` and `analyze`.
//!
//! Exit codes: 0 success, 1 partial or empty results, 2 configuration or
//! usage errors. API keys are read from the environment only.

pub mod chart;
pub mod report;

use std::path::PathBuf;
use std::sync::Mutex;

use clap::{Parser, Subcommand, ValueEnum};

use crate::backend::BackendKind;
use crate::experiment::{
    load_agents, load_runs, run_prepared, summarize, ExperimentError, ExperimentSpec,
    PreparedExperiment, RunOutcome, RunRecord,
};

pub use report::{write_report, ReportBundle};

pub const EXIT_OK: u8 = 0;
pub const EXIT_PARTIAL: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "polarsim",
    version,
    about = "Simulate and measure affective polarization among conversing agents"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    Scripted,
    Remote,
}

impl From<BackendArg> for BackendKind {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::Scripted => BackendKind::Scripted,
            BackendArg::Remote => BackendKind::Remote,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check an agent CSV file and report its agent count.
    Validate { agents_file: PathBuf },
    /// Execute every run of an experiment spec.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the spec's backend kind.
        #[arg(long, value_enum)]
        backend: Option<BackendArg>,
        /// Overrides the spec's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the spec's output directory for session logs.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
        /// Also summarize the runs and write report tables here.
        #[arg(long)]
        report: Option<PathBuf>,
        /// With --report, also write the SVG chart.
        #[arg(long, requires = "report")]
        charts: bool,
    },
    /// Summarize session logs and write report tables.
    Analyze {
        #[arg(long)]
        sessions: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        charts: bool,
    },
}

/// Runs a parsed command and returns its exit code.
pub fn execute(cli: Cli) -> u8 {
    match cli.command {
        Command::Validate { agents_file } => cmd_validate(&agents_file),
        Command::Run {
            config,
            backend,
            seed,
            out,
            workers,
            report,
            charts,
        } => cmd_run(
            &config,
            RunOverrides {
                backend: backend.map(Into::into),
                seed,
                out,
                workers,
            },
            report.as_deref().map(|r| (r, charts)),
        ),
        Command::Analyze {
            sessions,
            report,
            charts,
        } => cmd_analyze(&sessions, &report, charts),
    }
}

pub fn cmd_validate(path: &std::path::Path) -> u8 {
    match load_agents(path) {
        Ok(agents) => {
            let observers = agents.iter().filter(|a| a.is_observer()).count();
            println!("{} agents", agents.len());
            if observers > 0 {
                println!("{observers} observer(s)");
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {}: {e}", path.display());
            EXIT_CONFIG
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOverrides {
    pub backend: Option<BackendKind>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
}

fn apply(spec: &mut ExperimentSpec, o: RunOverrides) -> Result<(), ExperimentError> {
    if let Some(kind) = o.backend {
        spec.set_backend_kind(kind);
    }
    if let Some(seed) = o.seed {
        spec.master_seed = seed;
    }
    if let Some(out) = o.out {
        spec.output_dir = out;
    }
    if let Some(w) = o.workers {
        spec.workers = w;
    }
    spec.validate()
}

fn status_line(record: &RunRecord, outcome: &RunOutcome) -> String {
    let (verb, path) = match outcome {
        RunOutcome::Executed(p) => ("wrote", p),
        RunOutcome::Reused(p) => ("reused", p),
    };
    let status = if record.is_completed() {
        "completed".to_string()
    } else {
        format!(
            "ABORTED ({})",
            record.error.as_deref().unwrap_or("no reason recorded")
        )
    };
    format!(
        "{} {status}: {} messages, {verb} {}",
        record.run_id,
        record.conversation.transcript.len(),
        path.display()
    )
}

pub fn cmd_run(
    config: &std::path::Path,
    overrides: RunOverrides,
    report: Option<(&std::path::Path, bool)>,
) -> u8 {
    let prepared = ExperimentSpec::load(config)
        .and_then(|mut spec| apply(&mut spec, overrides).map(|_| spec))
        .and_then(PreparedExperiment::new);
    let prepared = match prepared {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };

    // progress arrives from worker threads; keep lines whole
    let stdout = Mutex::new(());
    let records = match run_prepared(&prepared, |record, outcome| {
        let _guard = stdout.lock();
        println!("{}", status_line(record, outcome));
    }) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return match e {
                ExperimentError::Config(_) | ExperimentError::Ingest(_) => EXIT_CONFIG,
                _ => EXIT_PARTIAL,
            };
        }
    };
    let aborted = records.iter().filter(|r| !r.is_completed()).count();
    println!(
        "{}: {} runs, {} completed, {aborted} aborted; logs in {}",
        prepared.spec().name,
        records.len(),
        records.len() - aborted,
        prepared.spec().output_dir.display()
    );

    if let Some((dir, charts)) = report {
        if let Err(code) = emit_report(&records, dir, charts) {
            return code;
        }
    }
    if aborted > 0 {
        EXIT_PARTIAL
    } else {
        EXIT_OK
    }
}

fn emit_report(records: &[RunRecord], dir: &std::path::Path, charts: bool) -> Result<(), u8> {
    let summary = match summarize(records) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return Err(EXIT_PARTIAL);
        }
    };
    print!("{}", report::delta_table(&summary));
    print!("{}", report::degree_table(&summary));
    println!("{}", report::overview_line(&summary));
    match write_report(&summary, dir, charts) {
        Ok(bundle) => {
            println!(
                "report: {} files in {}",
                bundle.files.len(),
                bundle.dir.display()
            );
            Ok(())
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            Err(EXIT_CONFIG)
        }
    }
}

pub fn cmd_analyze(sessions: &std::path::Path, report_dir: &std::path::Path, charts: bool) -> u8 {
    let records = match load_runs(sessions) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    match emit_report(&records, report_dir, charts) {
        Ok(()) => EXIT_OK,
        Err(code) => code,
    }
}
