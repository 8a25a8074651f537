// SPDX-License-Identifier: Apache-2.0

//! `value surplus` works in billions of USD; `value wagesum` reads wages in
//! USD and reports both USD and billions.
//!
//! CSV headers:
//!
//! * tasks: `occupation_id,task_id,freq_1,freq_2,freq_3,freq_4,freq_5,freq_6,freq_7,programming_share`
//!   where `freq_j` is the share of workers doing the task at frequency level j
//!   (1 = yearly or less, 7 = hourly or more);
//! * occupations: `occupation_id,annual_wage,employment`;
//! * microdata: `occupation_id,weight,annual_wage`.

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Subcommand};
use codeprov_core::valuation::{
    productivity_delta, wage_sum, MicroRow, Occupation, Scenario, TaskRow, WageSource, WageTaskTable, WeightScheme,
    WAGE_TO_COMPENSATION,
};
use codeprov_core::SurplusInputs;
use serde::Deserialize;
use serde_json::json;

use crate::io::{check_inputs, emit_json, need, read_csv, usage};
use crate::{Ctx, Outcome};

const USD_PER_BILLION: f64 = 1e9;

#[derive(Debug, Subcommand)]
pub enum ValueCmd {
    /// Consumer surplus of a proportional output gain.
    Surplus(SurplusArgs),
    /// Wage bill of programming time across occupations.
    Wagesum(WagesumArgs),
}

#[derive(Debug, Args)]
pub struct SurplusArgs {
    /// Proportional output gain; alternatively give --beta and --adoption.
    #[arg(long, allow_hyphen_values = true, conflicts_with_all = ["beta", "adoption"])]
    pub delta: Option<f64>,
    /// Log-point effect of a full switch to AI-written code.
    #[arg(long, allow_hyphen_values = true, requires = "adoption")]
    pub beta: Option<f64>,
    /// AI share of code.
    #[arg(long, requires = "beta")]
    pub adoption: Option<f64>,
    /// Price elasticity of demand (negative; `-inf` allowed).
    #[arg(long, allow_hyphen_values = true)]
    pub eta: Option<f64>,
    /// Value of code before the gain, billions of USD.
    #[arg(long)]
    pub v1: Option<f64>,
    #[arg(long, default_value = "inelastic")]
    pub scenario: Scenario,
    /// Write JSON here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct WagesumArgs {
    #[arg(long)]
    pub tasks: Option<PathBuf>,
    /// Aggregate wages and employment per occupation.
    #[arg(long, conflicts_with = "micro")]
    pub occupations: Option<PathBuf>,
    /// Weighted respondent wages.
    #[arg(long)]
    pub micro: Option<PathBuf>,
    #[arg(long, default_value = "relevance")]
    pub scheme: WeightScheme,
    /// Wage-to-compensation ratio.
    #[arg(long, default_value_t = WAGE_TO_COMPENSATION)]
    pub r: f64,
    /// Distributive scheme: keep raw level weights instead of rescaling
    /// occupied levels to sum to one.
    #[arg(long)]
    pub no_renormalize: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
struct TaskCsv {
    occupation_id: String,
    task_id: String,
    freq_1: f64,
    freq_2: f64,
    freq_3: f64,
    freq_4: f64,
    freq_5: f64,
    freq_6: f64,
    freq_7: f64,
    programming_share: f64,
}

impl From<TaskCsv> for TaskRow {
    fn from(t: TaskCsv) -> Self {
        TaskRow {
            occupation_id: t.occupation_id,
            task_id: t.task_id,
            frequency_shares: [t.freq_1, t.freq_2, t.freq_3, t.freq_4, t.freq_5, t.freq_6, t.freq_7],
            programming_share: t.programming_share,
        }
    }
}

pub fn run(_ctx: &Ctx, cmd: ValueCmd) -> Result<Outcome> {
    match cmd {
        ValueCmd::Surplus(a) => surplus(a),
        ValueCmd::Wagesum(a) => wagesum(a),
    }
}

fn surplus(a: SurplusArgs) -> Result<Outcome> {
    let delta = match (a.delta, a.beta, a.adoption) {
        (Some(d), None, None) => d,
        (None, Some(b), Some(s)) => productivity_delta(b, s),
        _ => return Err(usage("give --delta, or --beta with --adoption")),
    };
    let inputs = SurplusInputs { delta, eta: need(a.eta, "eta")?, v1: need(a.v1, "v1")?, scenario: a.scenario };
    let s = inputs.surplus().map_err(|e| usage(e.to_string()))?;
    let result = json!({
        "delta": delta,
        "eta": inputs.eta,
        "v1_billion_usd": inputs.v1,
        "scenario": inputs.scenario,
        "surplus_billion_usd": s,
    });
    emit_json(a.out.as_ref(), &result)?;
    Ok(Outcome { outputs: a.out.into_iter().collect(), diagnostics: json!({}) })
}

fn wagesum(a: WagesumArgs) -> Result<Outcome> {
    let tasks_path = need(a.tasks, "tasks")?;
    if !(a.r > 0.0) {
        return Err(usage("--r must be positive"));
    }
    check_inputs([tasks_path.as_path()].into_iter().chain(a.occupations.as_deref()).chain(a.micro.as_deref()))?;
    let tasks: Vec<TaskRow> = read_csv::<TaskCsv>(&tasks_path)?.into_iter().map(TaskRow::from).collect();
    let table = WageTaskTable { tasks, scheme: a.scheme, r: a.r, renormalize: !a.no_renormalize };
    let ws = match (&a.occupations, &a.micro) {
        (Some(p), None) => {
            let occ: Vec<Occupation> = read_csv(p)?;
            wage_sum(&table, WageSource::Aggregate(&occ))?
        }
        (None, Some(p)) => {
            let micro: Vec<MicroRow> = read_csv(p)?;
            wage_sum(&table, WageSource::Microdata(&micro))?
        }
        _ => return Err(usage("give exactly one of --occupations or --micro")),
    };
    let result = json!({
        "scheme": a.scheme,
        "r": a.r,
        "total_usd": ws.total,
        "total_billion_usd": ws.total / USD_PER_BILLION,
        "by_occupation_usd": ws.by_occupation,
        "programming_time_share": ws.programming_time,
        "excluded_occupations": ws.excluded,
    });
    emit_json(a.out.as_ref(), &result)?;
    Ok(Outcome {
        outputs: a.out.into_iter().collect(),
        diagnostics: json!({ "occupations": ws.by_occupation.len(), "excluded_occupations": ws.excluded.len() }),
    })
}
