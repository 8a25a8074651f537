// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use codeprov_core::correction::group_prevalence;
use codeprov_core::econometrics::{fit_panel, placebo_filter, DesignSpec, Model};
use codeprov_core::libnet::{cooccurrence_counts, louvain, pmi_graph, top_k_filter, Communities};
use codeprov_core::panel::{build_panel, join_scores, profiles_from_commits, Panel, PanelConfig};
use codeprov_core::{CorrectionParams, PanelRow, Quarter, ScoreRecord, UserProfile};
use serde::Serialize;
use serde_json::json;

use crate::io::{check_inputs, create, need, open, read_json, read_ndjson, usage, write_json};
use crate::pipeline::read_mined;
use crate::{info, warn, Ctx, Outcome};

/// `params.json`: group key (or country, or `*`) to confusion rates.
type ParamsFile = BTreeMap<String, CorrectionParams>;

/// Resolves the most specific entry: the full group key, then each of its
/// components, then `*`.
fn lookup(params: &ParamsFile, key: &str) -> Option<CorrectionParams> {
    std::iter::once(key)
        .chain(key.split('|'))
        .chain(std::iter::once("*"))
        .find_map(|k| params.get(k).cloned())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum GroupField {
    Country,
    Quarter,
    Year,
    User,
}

fn parse_group(spec: &str) -> Result<Vec<GroupField>> {
    spec.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| match s {
            "country" => Ok(GroupField::Country),
            "quarter" => Ok(GroupField::Quarter),
            "year" => Ok(GroupField::Year),
            "user" => Ok(GroupField::User),
            _ => Err(usage(format!("unknown group field `{s}` (country, quarter, year, user)"))),
        })
        .collect()
}

#[derive(Debug, Args)]
pub struct CorrectArgs {
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Mined functions; supply user, timestamp and commit country.
    #[arg(long)]
    pub meta: Option<PathBuf>,
    /// User profiles; a profile's country replaces the commit country.
    #[arg(long)]
    pub users: Option<PathBuf>,
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Comma-separated grouping fields: country, quarter, year, user.
    #[arg(long, default_value = "country,quarter")]
    pub group: String,
    /// Bootstrap replications per group.
    #[arg(long, default_value_t = 1000)]
    pub bootstrap: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn correct(ctx: &Ctx, a: CorrectArgs) -> Result<Outcome> {
    let scores_path = need(a.scores, "scores")?;
    let meta_path = need(a.meta, "meta")?;
    let params_path = need(a.params, "params")?;
    let out = need(a.out, "out")?;
    let fields = parse_group(&a.group)?;
    if fields.is_empty() {
        return Err(usage("--group needs at least one field"));
    }
    check_inputs([scores_path.as_path(), meta_path.as_path(), params_path.as_path()].into_iter().chain(a.users.as_deref()))?;

    let scores: Vec<ScoreRecord> = read_ndjson(&scores_path)?;
    let (_, functions) = read_mined(&meta_path)?;
    let params: ParamsFile = read_json(&params_path)?;
    let profile_country: BTreeMap<String, String> = match &a.users {
        Some(p) => read_ndjson::<UserProfile>(p)?
            .into_iter()
            .filter_map(|u| u.country.map(|c| (u.user_id, c)))
            .collect(),
        None => BTreeMap::new(),
    };

    let (joined, join) = join_scores(&functions, &scores, ctx.threshold);
    let country_of: BTreeMap<&str, Option<&str>> =
        functions.iter().map(|f| (f.change_id.as_str(), f.country.as_deref())).collect();
    let obs: Vec<(String, bool)> = joined
        .iter()
        .map(|f| {
            let key: Vec<String> = fields
                .iter()
                .map(|g| match g {
                    GroupField::Country => profile_country
                        .get(&f.user_id)
                        .map(String::as_str)
                        .or(country_of[f.change_id.as_str()])
                        .unwrap_or("")
                        .to_string(),
                    GroupField::Quarter => Quarter::of(&f.timestamp).to_string(),
                    GroupField::Year => Quarter::of(&f.timestamp).year.to_string(),
                    GroupField::User => f.user_id.clone(),
                })
                .collect();
            (key.join("|"), f.detected)
        })
        .collect();
    info(format!("correcting {} scored functions", obs.len()));
    let table = group_prevalence(&obs, |g| lookup(&params, g), a.bootstrap, ctx.derived("correct"))?;

    let mut w = csv::Writer::from_writer(create(&out)?);
    let mut header: Vec<&str> = fields
        .iter()
        .map(|g| match g {
            GroupField::Country => "country",
            GroupField::Quarter => "quarter",
            GroupField::Year => "year",
            GroupField::User => "user_id",
        })
        .collect();
    header.extend(["n_functions", "raw_detection_rate", "corrected", "ci_lo", "ci_hi", "implausible"]);
    w.write_record(&header)?;
    let mut implausible = Vec::new();
    for (key, est) in &table {
        let mut rec: Vec<String> = key.split('|').map(str::to_string).collect();
        rec.extend([
            est.n_functions.to_string(),
            est.raw_detection_rate.to_string(),
            est.corrected.to_string(),
            est.ci_lo.to_string(),
            est.ci_hi.to_string(),
            u8::from(est.is_implausible()).to_string(),
        ]);
        if est.is_implausible() {
            implausible.push(key.clone());
        }
        w.write_record(&rec)?;
    }
    w.flush().with_context(|| format!("cannot write {}", out.display()))?;
    if !implausible.is_empty() {
        warn(format!("{} groups have corrected shares outside [-0.05, 1.05]", implausible.len()));
    }
    Ok(Outcome {
        outputs: vec![out],
        diagnostics: json!({ "join": join, "groups": table.len(), "implausible_groups": implausible }),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CatLevel {
    Fine,
    Coarse,
}

#[derive(Debug, Args)]
pub struct PanelArgs {
    /// Mined commits and functions.
    #[arg(long)]
    pub functions: Option<PathBuf>,
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// User profiles (default: derived from the commits).
    #[arg(long)]
    pub users: Option<PathBuf>,
    /// Country (or `*`) to confusion rates.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Library communities written by `libnet`.
    #[arg(long)]
    pub catmap: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = CatLevel::Coarse)]
    pub cat_level: CatLevel,
    /// Function windows for moving-average AI columns `ai_k{k}`.
    #[arg(long, value_delimiter = ',')]
    pub ma_windows: Vec<usize>,
    #[arg(long, default_value_t = codeprov_core::panel::MIN_FUNCTIONS)]
    pub min_functions: usize,
    #[arg(long, default_value_t = codeprov_core::panel::MAX_FILL_QUARTERS)]
    pub max_fill: usize,
    #[arg(long, default_value_t = codeprov_core::panel::BURN_IN_QUARTERS)]
    pub burn_in: i64,
    #[arg(long, default_value_t = codeprov_core::panel::TOP_K_LIBRARIES)]
    pub topk: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn write_panel_csv(panel: &Panel, out: &std::path::Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(out)?);
    w.write_record(panel.header())?;
    for r in &panel.rows {
        w.write_record(r.to_fields(&panel.extra_columns))?;
    }
    w.flush().with_context(|| format!("cannot write {}", out.display()))
}

pub fn read_panel_csv(path: &std::path::Path) -> Result<Vec<PanelRow>> {
    let mut r = csv::Reader::from_reader(open(path)?);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.with_context(|| format!("{}: bad row {}", path.display(), i + 2))?;
        let fields: Vec<String> = rec.iter().map(str::to_string).collect();
        rows.push(PanelRow::from_fields(&header, &fields).with_context(|| format!("{}: row {}", path.display(), i + 2))?);
    }
    Ok(rows)
}

pub fn panel(ctx: &Ctx, a: PanelArgs) -> Result<Outcome> {
    let functions_path = need(a.functions, "functions")?;
    let scores_path = need(a.scores, "scores")?;
    let params_path = need(a.params, "params")?;
    let out = need(a.out, "out")?;
    if a.ma_windows.contains(&0) {
        return Err(usage("--ma-windows must be positive"));
    }
    check_inputs(
        [functions_path.as_path(), scores_path.as_path(), params_path.as_path()]
            .into_iter()
            .chain(a.users.as_deref())
            .chain(a.catmap.as_deref()),
    )?;
    let (commits, functions) = read_mined(&functions_path)?;
    let scores: Vec<ScoreRecord> = read_ndjson(&scores_path)?;
    let params: ParamsFile = read_json(&params_path)?;
    let profiles = match &a.users {
        Some(p) => read_ndjson::<UserProfile>(p)?,
        None => profiles_from_commits(&commits),
    };
    let categories = match &a.catmap {
        Some(p) => {
            let map: BTreeMap<String, Communities> = read_json(p)?;
            Some(
                map.into_iter()
                    .map(|(lib, c)| {
                        let id = if a.cat_level == CatLevel::Fine { c.fine } else { c.coarse };
                        (lib, id.to_string())
                    })
                    .collect(),
            )
        }
        None => None,
    };
    let (scored, join) = join_scores(&functions, &scores, ctx.threshold);
    let cfg = PanelConfig {
        min_functions: a.min_functions,
        max_fill: a.max_fill,
        burn_in_quarters: a.burn_in,
        top_k: a.topk,
        categories,
        require_categories: false,
        ma_windows: a.ma_windows,
    };
    info(format!("building panel from {} commits and {} scored functions", commits.len(), scored.len()));
    let panel = build_panel(&commits, &scored, &profiles, |c| lookup(&params, c), &cfg)?;
    write_panel_csv(&panel, &out)?;
    Ok(Outcome { outputs: vec![out], diagnostics: json!({ "join": join, "panel": panel.diagnostics }) })
}

#[derive(Debug, Args)]
pub struct LibnetArgs {
    /// Mined commits; a project's libraries are those its commits import.
    #[arg(long)]
    pub functions: Option<PathBuf>,
    /// Pseudo-count per library pair.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = codeprov_core::panel::TOP_K_LIBRARIES)]
    pub topk: usize,
    #[arg(long, default_value_t = 1.0)]
    pub resolution: f64,
    /// Keep edges whose PMI exceeds this value.
    #[arg(long, default_value_t = 0.0)]
    pub min_pmi: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn libnet(ctx: &Ctx, a: LibnetArgs) -> Result<Outcome> {
    let functions_path = need(a.functions, "functions")?;
    let out = need(a.out, "out")?;
    if !(a.resolution > 0.0) {
        return Err(usage("--resolution must be positive"));
    }
    check_inputs([functions_path.as_path()])?;
    let (commits, _) = read_mined(&functions_path)?;
    let mut projects: BTreeMap<&str, BTreeSet<String>> = BTreeMap::new();
    for c in &commits {
        projects.entry(&c.project_id).or_default().extend(c.imports_added.iter().cloned());
    }
    let counts = cooccurrence_counts(projects.values());
    let graph = top_k_filter(&pmi_graph(&counts, a.alpha, a.min_pmi)?, a.topk);
    info(format!("clustering {} libraries, {} edges", graph.nodes.len(), graph.edges.len()));
    let lv = louvain(&graph, a.resolution, ctx.derived("libnet"));
    write_json(&out, &lv.table())?;
    Ok(Outcome {
        outputs: vec![out],
        diagnostics: json!({
            "projects": counts.n_projects,
            "libraries": counts.project_counts.len(),
            "libraries_in_graph": graph.nodes.len(),
            "edges": graph.edges.len(),
            "undefined_pmi_pairs": graph.skipped_pairs,
            "fine_communities": lv.fine.n_communities(),
            "coarse_communities": lv.coarse.n_communities(),
            "modularity": lv.modularity_trace.last(),
        }),
    })
}

#[derive(Debug, Args)]
pub struct RegressArgs {
    #[arg(long)]
    pub panel: Option<PathBuf>,
    /// Outcome column, e.g. `n_all_log1p`.
    #[arg(long)]
    pub y: Option<String>,
    #[arg(long, default_value = "baseline")]
    pub spec: DesignSpec,
    #[arg(long, default_value = "ai_share_lag1")]
    pub regressor: String,
    /// Further columns a row must have to enter the sample.
    #[arg(long, value_delimiter = ',')]
    pub require: Vec<String>,
    /// Clustering of standard errors; only `user` is supported.
    #[arg(long, default_value = "user")]
    pub cluster: String,
    /// Restrict to quarters before this year (placebo period).
    #[arg(long)]
    pub placebo_before: Option<i32>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct FitFile<'a> {
    model: &'a Model,
    coefficients: BTreeMap<String, f64>,
    standard_errors: BTreeMap<String, f64>,
    p_values: BTreeMap<String, f64>,
    n_obs: usize,
    n_clusters: usize,
    n_periods: usize,
    r_squared_within: f64,
    se_type: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    quintile_bounds: Option<[f64; 4]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    placebo_before: Option<i32>,
}

pub fn regress(_ctx: &Ctx, a: RegressArgs) -> Result<Outcome> {
    let panel_path = need(a.panel, "panel")?;
    let y = need(a.y, "y")?;
    let out = need(a.out, "out")?;
    if a.cluster != "user" {
        return Err(usage(format!("unsupported --cluster `{}`; only `user` is available", a.cluster)));
    }
    check_inputs([panel_path.as_path()])?;
    let mut rows = read_panel_csv(&panel_path)?;
    if let Some(year) = a.placebo_before {
        let (kept, w) = placebo_filter(&rows, year);
        if let Some(w) = w {
            anyhow::bail!("{w}");
        }
        rows = kept;
    }
    let model = Model { y, regressor: a.regressor, design: a.spec, require: a.require };
    let (fit, design) = fit_panel(&rows, &model)?;
    let file = FitFile {
        model: &model,
        coefficients: fit.coefficients(),
        standard_errors: fit.terms.iter().map(|t| (t.name.clone(), t.se)).collect(),
        p_values: fit.terms.iter().map(|t| (t.name.clone(), t.p_value)).collect(),
        n_obs: fit.n_obs,
        n_clusters: fit.n_clusters,
        n_periods: fit.n_periods,
        r_squared_within: fit.r_squared_within,
        se_type: &fit.se_type,
        quintile_bounds: design.quintile_bounds,
        placebo_before: a.placebo_before,
    };
    write_json(&out, &file)?;
    Ok(Outcome {
        outputs: vec![out],
        diagnostics: json!({
            "panel_rows": rows.len(),
            "rows_dropped_incomplete": rows.len() - design.rows.len(),
        }),
    })
}
