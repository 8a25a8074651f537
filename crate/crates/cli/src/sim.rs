// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use codeprov_core::seed;
use codeprov_core::simulate::{simulate_corpus, validate_pipeline, SimFiles};
use codeprov_core::SimScenario;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::io::{check_inputs, need, read_json, usage, write_json};
use crate::{info, Ctx, Outcome};

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario JSON; missing fields take their defaults.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub replications: usize,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    pub replications: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// The scenario file, with its seed replaced by `--seed` when given.
fn load_scenario(ctx: &Ctx, path: Option<&PathBuf>) -> Result<SimScenario> {
    let mut sc = match path {
        Some(p) => {
            check_inputs([p.as_path()])?;
            read_json(p)?
        }
        None => SimScenario::default(),
    };
    if let Some(s) = ctx.seed {
        sc.seed = s;
    }
    sc.validate().map_err(|e| usage(format!("scenario: {e}")))?;
    Ok(sc)
}

#[derive(Serialize)]
struct ManifestEntry {
    replication: usize,
    seed: u64,
    dir: PathBuf,
    files: SimFiles,
    commits: usize,
}

pub fn simulate(ctx: &Ctx, a: SimulateArgs) -> Result<Outcome> {
    let out_dir = need(a.out_dir, "out-dir")?;
    if a.replications == 0 {
        return Err(usage("--replications must be positive"));
    }
    let sc = load_scenario(ctx, a.scenario.as_ref())?;
    info(format!("simulating {} replications", a.replications));
    let entries: Vec<ManifestEntry> = (0..a.replications)
        .into_par_iter()
        .map(|r| {
            // Same per-replication seeds as `validate`.
            let rep_seed = seed::derive(sc.seed, &format!("replication/{r}"));
            let rep_sc = SimScenario { seed: rep_seed, ..sc.clone() };
            let dir = out_dir.join(format!("rep{r:03}"));
            let corpus = simulate_corpus(&rep_sc)?;
            let files = corpus.write_to(&dir)?;
            write_json(&dir.join("scenario.json"), &rep_sc)?;
            Ok(ManifestEntry { replication: r, seed: rep_seed, dir, files, commits: corpus.commits.len() })
        })
        .collect::<Result<_>>()?;
    let manifest = out_dir.join("manifest.json");
    write_json(&manifest, &json!({ "scenario": sc, "replications": entries }))?;
    Ok(Outcome {
        outputs: vec![manifest],
        diagnostics: json!({
            "replications": entries.len(),
            "commits": entries.iter().map(|e| e.commits).sum::<usize>(),
        }),
    })
}

pub fn validate(ctx: &Ctx, a: ValidateArgs) -> Result<Outcome> {
    let out = need(a.out, "out")?;
    if a.replications == 0 {
        return Err(usage("--replications must be positive"));
    }
    let sc = load_scenario(ctx, a.scenario.as_ref())?;
    info(format!("validating over {} replications", a.replications));
    let report = validate_pipeline(&sc, a.replications)?;
    write_json(&out, &report)?;
    Ok(Outcome {
        outputs: vec![out],
        diagnostics: json!({ "summary": report.summary, "stage_failures": report.failures.len() }),
    })
}
