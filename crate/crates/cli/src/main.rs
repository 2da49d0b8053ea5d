//! `flowgeom`: validate corpora, build flows, analyze and plot them.

mod commands;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

pub const EXIT_VALIDATION: u8 = 1;
pub const EXIT_FAILURE: u8 = 2;
pub const EXIT_USAGE: u8 = 64;

#[derive(Debug, Parser, Serialize)]
#[command(name = "flowgeom", version, about = "Geometry of reasoning flows in embedding space")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Serialize)]
pub struct Global {
    /// Seed for every random choice (synthetic embeddings, generators, solvers).
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Where run.json goes (default: the command's output location).
    #[arg(long, global = true)]
    pub run_dir: Option<PathBuf>,
    #[arg(long, global = true, default_value = "info")]
    pub log_level: LogLevel,
    /// Line-delimited JSON logs on stderr.
    #[arg(long, global = true)]
    pub log_json: bool,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LogLevel {
    Error,
    Warn,
    Info,
    Debug,
    Trace,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Check a JSONL corpus: structure, step indices, justifications.
    Validate(commands::ValidateArgs),
    /// Build one flow per carrier record.
    Embed(commands::EmbedArgs),
    /// Pairwise similarity matrices and grouped means.
    Analyze(commands::AnalyzeArgs),
    /// PCA coordinates of flows (CSV, optional SVG).
    Project(commands::ProjectArgs),
    /// Render a similarity matrix CSV as an SVG heatmap.
    Heatmap(commands::HeatmapArgs),
    /// Relaxed prefix mask trajectory of a toy encoder and its C¹ report.
    SmoothDemo(commands::SmoothArgs),
    /// Generate a synthetic corpus, flows and expected report.
    Synth(commands::SynthArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Validate(_) => "validate",
            Command::Embed(_) => "embed",
            Command::Analyze(_) => "analyze",
            Command::Project(_) => "project",
            Command::Heatmap(_) => "heatmap",
            Command::SmoothDemo(_) => "smooth-demo",
            Command::Synth(_) => "synth",
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    /// Input is readable but not acceptable.
    #[error("{0}")]
    Validation(String),
    /// I/O, provider or other runtime failure.
    #[error("{0}")]
    Failure(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Failure(_) => EXIT_FAILURE,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Failure(e.to_string())
    }
}

#[derive(Serialize)]
struct RunRecord<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    config: &'a Cli,
}

fn write_run_record(cli: &Cli, dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let record = RunRecord {
        tool: "flowgeom",
        version: env!("CARGO_PKG_VERSION"),
        command: cli.command.name(),
        config: cli,
    };
    let json = serde_json::to_string_pretty(&record).expect("run record serializes");
    std::fs::write(dir.join("run.json"), json + "\n")
}

fn init_logging(global: &Global) {
    let level = match global.log_level {
        LogLevel::Error => tracing::Level::ERROR,
        LogLevel::Warn => tracing::Level::WARN,
        LogLevel::Info => tracing::Level::INFO,
        LogLevel::Debug => tracing::Level::DEBUG,
        LogLevel::Trace => tracing::Level::TRACE,
    };
    let builder = tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .with_target(false);
    if global.log_json {
        builder.json().init();
    } else {
        builder.without_time().init();
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    init_logging(&cli.global);
    if let Some(jobs) = cli.global.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global() {
            tracing::warn!(error = %e, "could not size the thread pool");
        }
    }

    let run_dir = cli
        .global
        .run_dir
        .clone()
        .unwrap_or_else(|| commands::default_run_dir(&cli.command));
    let outcome = commands::run(&cli.command, cli.global.seed);
    if let Err(e) = write_run_record(&cli, &run_dir) {
        eprintln!("error: cannot write run.json in {}: {e}", run_dir.display());
        if outcome.is_ok() {
            return ExitCode::from(EXIT_FAILURE);
        }
    }
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
