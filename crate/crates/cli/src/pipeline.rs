// SPDX-License-Identifier: Apache-2.0

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{Context, Result};
use chrono::{DateTime, Utc};
use clap::Args;
use codeprov_core::codemetrics::{verbosity_features, CorpusStats, RawFeatures};
use codeprov_core::ingest::git::read_repository;
use codeprov_core::ingest::{
    extract_function_changes, load_commit_dump, sort_commits, ExtractConfig, ExtractStats,
};
use codeprov_core::scoring::{evaluate, score_functions, train_baseline, ExternalScorer, Scorer, TrainHyper};
use codeprov_core::{BaselineModel, CommitMeta, Error, FunctionChange, MinedRecord, VerbosityFeatures};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::io::{check_inputs, need, read_json, read_ndjson, usage, write_json, write_ndjson};
use crate::{info, Ctx, Outcome};

#[derive(Debug, Args)]
pub struct MineArgs {
    /// Git checkouts to read (first-parent history).
    #[arg(long, num_args = 1.., conflicts_with = "dump")]
    pub repos: Vec<PathBuf>,
    /// Commit dump (NDJSON with a `cd1` schema header).
    #[arg(long)]
    pub dump: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// A function is kept when more than this share of its lines changed.
    #[arg(long, default_value_t = codeprov_core::ingest::functions::DEFAULT_THRESHOLD)]
    pub min_modified: f64,
}

pub fn mine(_ctx: &Ctx, a: MineArgs) -> Result<Outcome> {
    let out = need(a.out, "out")?;
    if !(0.0..1.0).contains(&a.min_modified) {
        return Err(usage("--min-modified must lie in [0, 1)"));
    }
    let (mut commits, dump_skipped) = match (&a.dump, a.repos.is_empty()) {
        (Some(d), true) => {
            check_inputs([d.as_path()])?;
            let loaded = load_commit_dump(d)?;
            (loaded.records, loaded.skipped)
        }
        (None, false) => {
            for r in &a.repos {
                if !r.is_dir() {
                    anyhow::bail!("input directory not found: {}", r.display());
                }
            }
            let mut all = Vec::new();
            for r in &a.repos {
                info(format!("reading {}", r.display()));
                all.extend(read_repository(r)?);
            }
            (all, 0)
        }
        _ => return Err(usage("give exactly one of --dump or --repos")),
    };
    sort_commits(&mut commits);
    info(format!("extracting functions from {} commits", commits.len()));
    let cfg = ExtractConfig { threshold: a.min_modified };
    let extractions: Vec<_> = commits.par_iter().map(|c| extract_function_changes(c, &cfg)).collect();
    let mut stats = ExtractStats::default();
    let mut records = Vec::new();
    for e in extractions {
        stats += e.stats;
        records.extend(e.commit.map(MinedRecord::Commit));
        records.extend(e.functions.into_iter().map(MinedRecord::Function));
    }
    write_ndjson(&out, &records)?;
    Ok(Outcome {
        outputs: vec![out],
        diagnostics: json!({ "extract": stats, "dump_lines_skipped": dump_skipped }),
    })
}

/// Commits and functions of a mined file.
pub fn read_mined(path: &Path) -> Result<(Vec<CommitMeta>, Vec<FunctionChange>)> {
    let mut commits = Vec::new();
    let mut functions = Vec::new();
    for r in read_ndjson::<MinedRecord>(path)? {
        match r {
            MinedRecord::Commit(c) => commits.push(c),
            MinedRecord::Function(f) => functions.push(f),
        }
    }
    Ok((commits, functions))
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Mined functions.
    #[arg(long = "in", id = "in")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Corpus moments to standardise against (default: fit on the input).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Where to save the corpus moments used.
    #[arg(long)]
    pub corpus_out: Option<PathBuf>,
}

#[derive(Serialize)]
struct FeatureRecord<'a> {
    function_id: &'a str,
    #[serde(flatten)]
    features: VerbosityFeatures,
}

pub fn metrics(_ctx: &Ctx, a: MetricsArgs) -> Result<Outcome> {
    let input = need(a.input, "in")?;
    let out = need(a.out, "out")?;
    check_inputs([input.as_path()].into_iter().chain(a.corpus.as_deref()))?;
    let (_, functions) = read_mined(&input)?;
    let corpus: CorpusStats = match &a.corpus {
        Some(p) => read_json(p)?,
        None => {
            let raw: Vec<RawFeatures> = functions.iter().map(|f| RawFeatures::of(&f.code)).collect();
            CorpusStats::fit(&raw)
        }
    };
    let mut records = Vec::with_capacity(functions.len());
    let mut empty = 0usize;
    for f in &functions {
        match verbosity_features(&f.code, &corpus) {
            Ok(features) => records.push(FeatureRecord { function_id: &f.change_id, features }),
            Err(Error::EmptyFunctionBody) => empty += 1,
            Err(e) => return Err(e).context("corpus statistics cannot standardise these functions"),
        }
    }
    write_ndjson(&out, &records)?;
    let mut outputs = vec![out];
    if let Some(p) = a.corpus_out {
        write_json(&p, &corpus)?;
        outputs.push(p);
    }
    Ok(Outcome {
        outputs,
        diagnostics: json!({ "functions": functions.len(), "written": records.len(), "empty_bodies_skipped": empty }),
    })
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// NDJSON lines `{"code": "...", "label": true}`; true marks AI-written code.
    #[arg(long)]
    pub labeled: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = TrainHyper::default().epochs)]
    pub epochs: usize,
    #[arg(long, default_value_t = TrainHyper::default().learning_rate)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = TrainHyper::default().l2)]
    pub l2: f64,
}

#[derive(Debug, Deserialize)]
struct Labeled {
    code: String,
    label: bool,
}

pub fn train(ctx: &Ctx, a: TrainArgs) -> Result<Outcome> {
    let labeled_path = need(a.labeled, "labeled")?;
    let out = need(a.out, "out")?;
    check_inputs([labeled_path.as_path()])?;
    let rows: Vec<Labeled> = read_ndjson(&labeled_path)?;
    let raw: Vec<RawFeatures> = rows.iter().map(|r| RawFeatures::of(&r.code)).collect();
    let corpus = CorpusStats::fit(&raw);
    let mut data = Vec::with_capacity(rows.len());
    let mut skipped = 0usize;
    for r in &rows {
        match verbosity_features(&r.code, &corpus) {
            Ok(f) => data.push((f, r.label)),
            Err(Error::EmptyFunctionBody) => skipped += 1,
            Err(e) => return Err(e.into()),
        }
    }
    let hyper = TrainHyper { learning_rate: a.learning_rate, epochs: a.epochs, l2: a.l2, seed: ctx.derived("train") };
    info(format!("training on {} examples", data.len()));
    let mut model = train_baseline(&data, &hyper)?;
    let probs: Vec<f64> = data.iter().map(|(f, _)| model.predict(f)).collect();
    let labels: Vec<bool> = data.iter().map(|(_, l)| *l).collect();
    let fit = evaluate(&probs, &labels, ctx.threshold)?;
    model.corpus = Some(corpus);
    write_json(&out, &model)?;
    Ok(Outcome {
        outputs: vec![out],
        diagnostics: json!({
            "examples": data.len(),
            "positives": labels.iter().filter(|&&l| l).count(),
            "empty_bodies_skipped": skipped,
            "final_loss": model.loss_trace.last(),
            "in_sample": fit,
        }),
    })
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Baseline model written by `train`.
    #[arg(long, conflicts_with = "exec")]
    pub model: Option<PathBuf>,
    /// External scorer command speaking the line protocol.
    #[arg(long)]
    pub exec: Option<String>,
    /// Mined functions.
    #[arg(long = "in", id = "in")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Timestamp stamped on every score (default: latest function timestamp).
    #[arg(long)]
    pub scored_at: Option<DateTime<Utc>>,
    #[arg(long, default_value_t = 256)]
    pub batch: usize,
    /// Per-response timeout for external scorers, in seconds.
    #[arg(long, default_value_t = codeprov_core::scoring::DEFAULT_TIMEOUT.as_secs())]
    pub timeout: u64,
}

pub fn score(_ctx: &Ctx, a: ScoreArgs) -> Result<Outcome> {
    let input = need(a.input, "in")?;
    let out = need(a.out, "out")?;
    if a.batch == 0 {
        return Err(usage("--batch must be positive"));
    }
    check_inputs([input.as_path()].into_iter().chain(a.model.as_deref()))?;
    let (_, functions) = read_mined(&input)?;
    let mut scorer = match (&a.model, &a.exec) {
        (Some(m), None) => Scorer::Builtin(read_json::<BaselineModel>(m)?),
        (None, Some(cmd)) => Scorer::External(ExternalScorer::spawn(cmd, Duration::from_secs(a.timeout))?),
        _ => return Err(usage("give exactly one of --model or --exec")),
    };
    let scored_at = a
        .scored_at
        .or_else(|| functions.iter().map(|f| f.timestamp).max())
        .unwrap_or(DateTime::<Utc>::UNIX_EPOCH);
    let mut records = Vec::with_capacity(functions.len());
    for (i, chunk) in functions.chunks(a.batch).enumerate() {
        let batch: Vec<(&str, &str)> = chunk.iter().map(|f| (f.change_id.as_str(), f.code.as_str())).collect();
        records.extend(score_functions(&mut scorer, &batch, scored_at)?);
        info(format!("scored batch {} ({} functions)", i + 1, records.len()));
    }
    let failures = records.iter().filter(|r| r.p_ai.is_none()).count();
    write_ndjson(&out, &records)?;
    Ok(Outcome {
        outputs: vec![out],
        diagnostics: json!({ "scorer_id": scorer.id(), "scored": records.len(), "scorer_failures": failures }),
    })
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Baseline model to serve.
    #[arg(long, conflicts_with = "constant")]
    pub model: Option<PathBuf>,
    /// Answer every request with this probability.
    #[arg(long)]
    pub constant: Option<f64>,
}

pub fn serve_scorer(_ctx: &Ctx, a: ServeArgs) -> Result<Outcome> {
    check_inputs(a.model.as_deref())?;
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    match (a.model, a.constant) {
        (Some(m), None) => {
            let model: BaselineModel = read_json(&m)?;
            let id = format!("baseline-{}", model.training_seed);
            codeprov_core::scoring::protocol::serve(stdin.lock(), stdout.lock(), &id, |code| {
                model.score_code(code).map_err(|e| e.to_string())
            })?;
        }
        (None, Some(p)) if (0.0..=1.0).contains(&p) => {
            codeprov_core::scoring::protocol::serve(stdin.lock(), stdout.lock(), "constant", |_| Ok(p))?;
        }
        (None, Some(_)) => return Err(usage("--constant must lie in [0, 1]")),
        _ => return Err(usage("give exactly one of --model or --constant")),
    }
    Ok(Outcome::default())
}

