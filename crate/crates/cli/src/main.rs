// SPDX-License-Identifier: Apache-2.0

//! `codeprov`: mine commits, score functions, build the user-quarter panel,
//! estimate effects and value them.
//!
//! Exit codes: 0 on success, 1 on a usage error, 2 on a data error. Every
//! run ends with one JSON line on stderr summarising outputs and
//! diagnostics.

mod analysis;
mod config;
mod io;
mod pipeline;
mod sim;
mod value;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicU8, Ordering};

use anyhow::Result;
use clap::{CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::Value;

use crate::io::{usage, UsageError};

#[derive(Debug, Parser)]
#[command(name = "codeprov", version, about = "Provenance of code changes and what it is worth")]
struct Cli {
    /// TOML file with option defaults; command-line options take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Master seed; every random stream is derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Score at or above which a function counts as AI-written.
    #[arg(long, global = true, default_value_t = 0.5)]
    threshold: f64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = LogLevel::Warn)]
    log_level: LogLevel,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum)]
enum LogLevel {
    Error,
    Warn,
    Info,
    Debug,
}

static LOG_LEVEL: AtomicU8 = AtomicU8::new(LogLevel::Warn as u8);

/// Progress line on stderr, shown from `--log-level info` up.
pub fn info(msg: impl AsRef<str>) {
    if LOG_LEVEL.load(Ordering::Relaxed) >= LogLevel::Info as u8 {
        eprintln!("codeprov: {}", msg.as_ref());
    }
}

pub fn warn(msg: impl AsRef<str>) {
    if LOG_LEVEL.load(Ordering::Relaxed) >= LogLevel::Warn as u8 {
        eprintln!("codeprov: warning: {}", msg.as_ref());
    }
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Extract substantially modified Python functions from commits.
    Mine(pipeline::MineArgs),
    /// Verbosity features per mined function.
    Metrics(pipeline::MetricsArgs),
    /// Fit the baseline logistic scorer on labelled code.
    Train(pipeline::TrainArgs),
    /// Score mined functions with the baseline model or an external scorer.
    Score(pipeline::ScoreArgs),
    /// Serve a scorer over the line protocol on stdin/stdout.
    ServeScorer(pipeline::ServeArgs),
    /// Misclassification-corrected AI prevalence by group.
    Correct(analysis::CorrectArgs),
    /// Build the user-quarter panel.
    Panel(analysis::PanelArgs),
    /// Library co-occurrence network and its communities.
    Libnet(analysis::LibnetArgs),
    /// Two-way fixed-effects regression on the panel.
    Regress(analysis::RegressArgs),
    /// Consumer surplus and programming wage sums.
    #[command(subcommand)]
    Value(value::ValueCmd),
    /// Write simulated commit dumps with ground truth.
    Simulate(sim::SimulateArgs),
    /// Run the full pipeline on simulated data against ground truth.
    Validate(sim::ValidateArgs),
}

/// Settings shared by all subcommands.
pub struct Ctx {
    pub seed: Option<u64>,
    pub threshold: f64,
}

impl Ctx {
    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    /// Seed of one subsystem.
    pub fn derived(&self, label: &str) -> u64 {
        codeprov_core::seed::derive(self.seed(), label)
    }
}

/// What a subcommand reports back for the summary line.
#[derive(Debug, Default, Serialize)]
pub struct Outcome {
    pub outputs: Vec<PathBuf>,
    pub diagnostics: Value,
}

#[derive(Serialize)]
struct Summary<'a> {
    command: &'a str,
    status: &'a str,
    exit_code: u8,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    outputs: Vec<PathBuf>,
    diagnostics: Value,
}

fn parse(argv: Vec<OsString>) -> Result<Cli, clap::Error> {
    let cmd = Cli::command();
    let matches = cmd.clone().try_get_matches_from(&argv)?;
    let Some(path) = config::find_config_flag(&argv) else {
        return Cli::from_arg_matches(&matches);
    };
    let merged = config::load(&path)
        .and_then(|cfg| config::merge(&argv, &cmd, &matches, &cfg))
        .map_err(|e| ConfigFailure(e).into_clap())?;
    Cli::from_arg_matches(&cmd.try_get_matches_from(merged)?)
}

/// Carries a config error through clap's error type.
struct ConfigFailure(anyhow::Error);

impl ConfigFailure {
    fn into_clap(self) -> clap::Error {
        let kind = if self.0.is::<UsageError>() { clap::error::ErrorKind::InvalidValue } else { clap::error::ErrorKind::Io };
        clap::Error::raw(kind, format!("{:#}\n", self.0))
    }
}

fn command_name(cmd: &Cmd) -> &'static str {
    match cmd {
        Cmd::Mine(_) => "mine",
        Cmd::Metrics(_) => "metrics",
        Cmd::Train(_) => "train",
        Cmd::Score(_) => "score",
        Cmd::ServeScorer(_) => "serve-scorer",
        Cmd::Correct(_) => "correct",
        Cmd::Panel(_) => "panel",
        Cmd::Libnet(_) => "libnet",
        Cmd::Regress(_) => "regress",
        Cmd::Value(value::ValueCmd::Surplus(_)) => "value surplus",
        Cmd::Value(value::ValueCmd::Wagesum(_)) => "value wagesum",
        Cmd::Simulate(_) => "simulate",
        Cmd::Validate(_) => "validate",
    }
}

fn dispatch(cli: Cli) -> Result<Outcome> {
    if !(cli.threshold > 0.0 && cli.threshold < 1.0) {
        return Err(usage(format!("--threshold must lie in (0, 1), got {}", cli.threshold)));
    }
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(usage("--workers must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| anyhow::anyhow!("cannot start worker pool: {e}"))?;
    }
    let ctx = Ctx { seed: cli.seed, threshold: cli.threshold };
    match cli.command {
        Cmd::Mine(a) => pipeline::mine(&ctx, a),
        Cmd::Metrics(a) => pipeline::metrics(&ctx, a),
        Cmd::Train(a) => pipeline::train(&ctx, a),
        Cmd::Score(a) => pipeline::score(&ctx, a),
        Cmd::ServeScorer(a) => pipeline::serve_scorer(&ctx, a),
        Cmd::Correct(a) => analysis::correct(&ctx, a),
        Cmd::Panel(a) => analysis::panel(&ctx, a),
        Cmd::Libnet(a) => analysis::libnet(&ctx, a),
        Cmd::Regress(a) => analysis::regress(&ctx, a),
        Cmd::Value(v) => value::run(&ctx, v),
        Cmd::Simulate(a) => sim::simulate(&ctx, a),
        Cmd::Validate(a) => sim::validate(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = match parse(std::env::args_os().collect()) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    ExitCode::SUCCESS
                }
                ErrorKind::Io => ExitCode::from(2),
                _ => ExitCode::from(1),
            };
        }
    };
    LOG_LEVEL.store(cli.log_level as u8, Ordering::Relaxed);
    let name = command_name(&cli.command);
    let quiet = matches!(cli.command, Cmd::ServeScorer(_));
    let (code, summary) = match dispatch(cli) {
        Ok(out) => (
            0,
            Summary { command: name, status: "ok", exit_code: 0, error: None, outputs: out.outputs, diagnostics: out.diagnostics },
        ),
        Err(e) => {
            let code = if e.is::<UsageError>() { 1 } else { 2 };
            eprintln!("codeprov: error: {e:#}");
            (
                code,
                Summary {
                    command: name,
                    status: "error",
                    exit_code: code,
                    error: Some(format!("{e:#}")),
                    outputs: Vec::new(),
                    diagnostics: Value::Null,
                },
            )
        }
    };
    if !quiet || code != 0 {
        eprintln!("{}", serde_json::to_string(&summary).unwrap_or_default());
    }
    ExitCode::from(code)
}
