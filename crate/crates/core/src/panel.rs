// SPDX-License-Identifier: Apache-2.0

//! The user-quarter panel: bot filtering, corrected AI shares with limited
//! forward filling, lags, commit-count outcomes and library novelty.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correction::{correct_prevalence, CorrectionParams};
use crate::econometrics::{interpolate_to_quarter, moving_average_ai};
use crate::ingest::{CommitMeta, FunctionChange};
use crate::quarter::Quarter;
use crate::scoring::ScoreRecord;
use crate::{Error, Result};

pub const BOT_TOTAL_COMMITS: u64 = 10_000;
pub const BOT_QUARTER_COMMITS: u64 = 2_000;
pub const MIN_FUNCTIONS: usize = 10;
pub const MAX_FILL_QUARTERS: usize = 2;
/// Quarters at the start of a user's history that only seed the novelty
/// baseline.
pub const BURN_IN_QUARTERS: i64 = 4;
pub const TOP_K_LIBRARIES: usize = 5000;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Female,
    Male,
    #[default]
    Unknown,
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gender::Female => "female",
            Gender::Male => "male",
            Gender::Unknown => "unknown",
        })
    }
}

impl FromStr for Gender {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "female" => Ok(Gender::Female),
            "male" => Ok(Gender::Male),
            "unknown" | "" => Ok(Gender::Unknown),
            other => Err(Error::invalid(format!("unknown gender `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: String,
    pub first_activity: DateTime<Utc>,
    pub total_commits: u64,
    pub max_quarter_commits: u64,
    #[serde(default)]
    pub country: Option<String>,
    #[serde(default)]
    pub gender: Gender,
    #[serde(default)]
    pub display_name_inferred: bool,
}

impl UserProfile {
    pub fn is_bot(&self) -> bool {
        self.total_commits > BOT_TOTAL_COMMITS || self.max_quarter_commits > BOT_QUARTER_COMMITS
    }
}

/// Users that pass the activity filters.
pub fn filter_bots(profiles: &[UserProfile]) -> BTreeSet<String> {
    profiles
        .iter()
        .filter(|p| !p.is_bot())
        .map(|p| p.user_id.clone())
        .collect()
}

/// Profiles from commit metadata alone. The country is the one on the
/// user's latest commit that has one; gender stays unknown.
pub fn profiles_from_commits(commits: &[CommitMeta]) -> Vec<UserProfile> {
    let mut by_user: BTreeMap<&str, Vec<&CommitMeta>> = BTreeMap::new();
    for c in commits {
        by_user.entry(&c.user_id).or_default().push(c);
    }
    by_user
        .into_iter()
        .map(|(user, mut cs)| {
            cs.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.commit_id.cmp(&b.commit_id)));
            let mut per_q: BTreeMap<Quarter, u64> = BTreeMap::new();
            for c in &cs {
                *per_q.entry(Quarter::of(&c.timestamp)).or_default() += 1;
            }
            UserProfile {
                user_id: user.to_string(),
                first_activity: cs[0].timestamp,
                total_commits: cs.len() as u64,
                max_quarter_commits: per_q.values().copied().max().unwrap_or(0),
                country: cs.iter().rev().find_map(|c| c.country.clone()),
                gender: Gender::Unknown,
                display_name_inferred: false,
            }
        })
        .collect()
}

/// Corrected AI share of one user-quarter, or `None` below `min_functions`.
pub fn aggregate_ai_share(
    n_functions: usize,
    detections: usize,
    params: &CorrectionParams,
    min_functions: usize,
) -> Result<Option<f64>> {
    if n_functions == 0 || n_functions < min_functions {
        return Ok(None);
    }
    correct_prevalence(detections as f64 / n_functions as f64, params).map(Some)
}

/// Fills each gap with the last observed value if it is at most
/// `max_quarters` back. The flag marks filled entries.
pub fn forward_fill(series: &[Option<f64>], max_quarters: usize) -> Vec<(Option<f64>, bool)> {
    let mut last: Option<(usize, f64)> = None;
    series
        .iter()
        .enumerate()
        .map(|(i, v)| match v {
            Some(x) => {
                last = Some((i, *x));
                (Some(*x), false)
            }
            None => match last {
                Some((j, x)) if i - j <= max_quarters => (Some(x), true),
                _ => (None, false),
            },
        })
        .collect()
}

/// A scored function reduced to what the panel needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredFunction {
    pub user_id: String,
    pub change_id: String,
    pub timestamp: DateTime<Utc>,
    pub detected: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct JoinStats {
    pub functions: usize,
    pub unscored: usize,
    pub scorer_failures: usize,
}

/// Attaches detection flags (`p_ai >= threshold`) to function changes by
/// change id. Functions without a usable score are left out and counted.
pub fn join_scores(
    functions: &[FunctionChange],
    scores: &[ScoreRecord],
    threshold: f64,
) -> (Vec<ScoredFunction>, JoinStats) {
    let by_id: BTreeMap<&str, &ScoreRecord> = scores.iter().map(|s| (s.function_id.as_str(), s)).collect();
    let mut stats = JoinStats { functions: functions.len(), ..Default::default() };
    let mut out = Vec::with_capacity(functions.len());
    for f in functions {
        match by_id.get(f.change_id.as_str()) {
            None => stats.unscored += 1,
            Some(s) => match s.detected(threshold) {
                None => stats.scorer_failures += 1,
                Some(detected) => out.push(ScoredFunction {
                    user_id: f.user_id.clone(),
                    change_id: f.change_id.clone(),
                    timestamp: f.timestamp,
                    detected,
                }),
            },
        }
    }
    (out, stats)
}

/// Use and entry counts of libraries, library combinations and library
/// pairs in one quarter. Entry counts are `None` during the burn-in.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Novelty {
    pub lib_use: u64,
    pub lib_entry: Option<u64>,
    pub combo_use: u64,
    pub combo_entry: Option<u64>,
    pub pair_use: u64,
    pub pair_entry: Option<u64>,
}

/// Novelty counts for each quarter in `quarters` (consecutive, starting at
/// the user's first quarter). `sets` holds each quarter's per-commit added
/// library sets; empty sets are ignored.
pub fn novelty_by_quarter(
    quarters: &[Quarter],
    sets: &BTreeMap<Quarter, Vec<BTreeSet<String>>>,
    burn_in: i64,
) -> Vec<Novelty> {
    let Some(first) = quarters.first() else {
        return Vec::new();
    };
    let mut seen_libs: HashSet<String> = HashSet::new();
    let mut seen_combos: HashSet<BTreeSet<String>> = HashSet::new();
    let mut seen_pairs: HashSet<(String, String)> = HashSet::new();
    let empty = Vec::new();
    quarters
        .iter()
        .map(|q| {
            let commit_sets = sets.get(q).unwrap_or(&empty);
            let mut libs: BTreeSet<&String> = BTreeSet::new();
            let mut combos: BTreeSet<&BTreeSet<String>> = BTreeSet::new();
            let mut pairs: BTreeSet<(&String, &String)> = BTreeSet::new();
            for s in commit_sets.iter().filter(|s| !s.is_empty()) {
                libs.extend(s);
                combos.insert(s);
                let v: Vec<&String> = s.iter().collect();
                for (i, a) in v.iter().enumerate() {
                    for b in &v[i + 1..] {
                        pairs.insert((a, b));
                    }
                }
            }
            let counting = q.index() - first.index() >= burn_in;
            let entry = |n: usize| counting.then_some(n as u64);
            let row = Novelty {
                lib_use: libs.len() as u64,
                lib_entry: entry(libs.iter().filter(|l| !seen_libs.contains(**l)).count()),
                combo_use: combos.len() as u64,
                combo_entry: entry(combos.iter().filter(|c| !seen_combos.contains(**c)).count()),
                pair_use: pairs.len() as u64,
                pair_entry: entry(
                    pairs
                        .iter()
                        .filter(|(a, b)| !seen_pairs.contains(&((*a).clone(), (*b).clone())))
                        .count(),
                ),
            };
            seen_libs.extend(libs.into_iter().cloned());
            seen_combos.extend(combos.into_iter().cloned());
            seen_pairs.extend(pairs.into_iter().map(|(a, b)| (a.clone(), b.clone())));
            row
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PanelRow {
    pub user_id: String,
    pub quarter: Option<Quarter>,
    pub ai_share: Option<f64>,
    pub ai_share_filled: bool,
    pub ai_share_lag1: Option<f64>,
    pub n_functions: u64,
    pub n_all: u64,
    pub n_mult: u64,
    pub n_imp: u64,
    pub novelty: Novelty,
    pub novelty_5k: Novelty,
    pub novelty_cat: Option<Novelty>,
    pub experience_years: i32,
    pub gender: Gender,
    pub country: Option<String>,
    /// Additional numeric columns such as moving-average AI measures.
    pub extra: BTreeMap<String, f64>,
}

const NOVELTY_FIELDS: [&str; 6] = ["lib_use", "lib_entry", "combo_use", "combo_entry", "pair_use", "pair_entry"];

fn novelty_get(n: &Novelty, field: &str) -> Option<u64> {
    match field {
        "lib_use" => Some(n.lib_use),
        "lib_entry" => n.lib_entry,
        "combo_use" => Some(n.combo_use),
        "combo_entry" => n.combo_entry,
        "pair_use" => Some(n.pair_use),
        "pair_entry" => n.pair_entry,
        _ => None,
    }
}

fn novelty_set(n: &mut Novelty, field: &str, v: Option<u64>) {
    match field {
        "lib_use" => n.lib_use = v.unwrap_or(0),
        "lib_entry" => n.lib_entry = v,
        "combo_use" => n.combo_use = v.unwrap_or(0),
        "combo_entry" => n.combo_entry = v,
        "pair_use" => n.pair_use = v.unwrap_or(0),
        "pair_entry" => n.pair_entry = v,
        _ => {}
    }
}

fn fmt_opt<T: fmt::Display>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl PanelRow {
    /// Fixed CSV columns, in order.
    pub fn base_columns() -> Vec<String> {
        let mut cols: Vec<String> = [
            "user_id",
            "quarter",
            "ai_share",
            "ai_share_filled",
            "ai_share_lag1",
            "n_functions",
            "n_all",
            "n_mult",
            "n_imp",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        for suffix in ["", "_5k", "_cat"] {
            cols.extend(NOVELTY_FIELDS.iter().map(|f| format!("{f}{suffix}")));
        }
        cols.extend(["experience_years", "gender", "country"].map(String::from));
        cols
    }

    /// Numeric value of a column. A `_log1p` suffix returns `ln(1 + v)`.
    pub fn get(&self, column: &str) -> Option<f64> {
        if let Some(base) = column.strip_suffix("_log1p") {
            return self.get(base).map(f64::ln_1p);
        }
        let count = |v: u64| Some(v as f64);
        match column {
            "ai_share" => self.ai_share,
            "ai_share_lag1" => self.ai_share_lag1,
            "n_functions" => count(self.n_functions),
            "n_all" => count(self.n_all),
            "n_mult" => count(self.n_mult),
            "n_imp" => count(self.n_imp),
            "experience_years" => Some(self.experience_years as f64),
            _ => {
                for (suffix, nov) in [("_5k", Some(&self.novelty_5k)), ("_cat", self.novelty_cat.as_ref())] {
                    if let Some(f) = column.strip_suffix(suffix) {
                        if NOVELTY_FIELDS.contains(&f) {
                            return nov.and_then(|n| novelty_get(n, f)).map(|v| v as f64);
                        }
                    }
                }
                if NOVELTY_FIELDS.contains(&column) {
                    return novelty_get(&self.novelty, column).map(|v| v as f64);
                }
                self.extra.get(column).copied()
            }
        }
    }

    pub fn has_column(&self, column: &str) -> bool {
        let base = column.strip_suffix("_log1p").unwrap_or(column);
        Self::base_columns().iter().any(|c| c == base) || self.extra.contains_key(base)
    }

    pub fn set(&mut self, column: &str, v: Option<f64>) {
        match column {
            "ai_share" => self.ai_share = v,
            "ai_share_lag1" => self.ai_share_lag1 = v,
            _ => match v {
                Some(x) => {
                    self.extra.insert(column.to_string(), x);
                }
                None => {
                    self.extra.remove(column);
                }
            },
        }
    }

    pub fn to_fields(&self, extras: &[String]) -> Vec<String> {
        let mut out = vec![
            self.user_id.clone(),
            fmt_opt(self.quarter),
            fmt_opt(self.ai_share),
            u8::from(self.ai_share_filled).to_string(),
            fmt_opt(self.ai_share_lag1),
            self.n_functions.to_string(),
            self.n_all.to_string(),
            self.n_mult.to_string(),
            self.n_imp.to_string(),
        ];
        for nov in [Some(&self.novelty), Some(&self.novelty_5k), self.novelty_cat.as_ref()] {
            for f in NOVELTY_FIELDS {
                out.push(fmt_opt(nov.and_then(|n| novelty_get(n, f))));
            }
        }
        out.push(self.experience_years.to_string());
        out.push(self.gender.to_string());
        out.push(self.country.clone().unwrap_or_default());
        out.extend(extras.iter().map(|c| fmt_opt(self.extra.get(c))));
        out
    }

    /// Inverse of [`PanelRow::to_fields`]; columns not in the fixed set
    /// become extras.
    pub fn from_fields(header: &[String], fields: &[String]) -> Result<Self> {
        if header.len() != fields.len() {
            return Err(Error::invalid("panel row width differs from header"));
        }
        let mut row = PanelRow::default();
        let mut cat = Novelty::default();
        let mut has_cat = false;
        for (col, val) in header.iter().zip(fields) {
            let num = |v: &str| -> Result<Option<f64>> {
                if v.is_empty() {
                    Ok(None)
                } else {
                    v.parse::<f64>()
                        .map(Some)
                        .map_err(|_| Error::invalid(format!("column `{col}`: bad number `{v}`")))
                }
            };
            let int = |v: &str| -> Result<Option<u64>> {
                if v.is_empty() {
                    Ok(None)
                } else {
                    v.parse::<u64>()
                        .map(Some)
                        .map_err(|_| Error::invalid(format!("column `{col}`: bad count `{v}`")))
                }
            };
            match col.as_str() {
                "user_id" => row.user_id = val.clone(),
                "quarter" => row.quarter = if val.is_empty() { None } else { Some(val.parse()?) },
                "ai_share" => row.ai_share = num(val)?,
                "ai_share_filled" => row.ai_share_filled = val == "1" || val == "true",
                "ai_share_lag1" => row.ai_share_lag1 = num(val)?,
                "n_functions" => row.n_functions = int(val)?.unwrap_or(0),
                "n_all" => row.n_all = int(val)?.unwrap_or(0),
                "n_mult" => row.n_mult = int(val)?.unwrap_or(0),
                "n_imp" => row.n_imp = int(val)?.unwrap_or(0),
                "experience_years" => {
                    row.experience_years = val
                        .parse()
                        .map_err(|_| Error::invalid(format!("bad experience `{val}`")))?
                }
                "gender" => row.gender = val.parse()?,
                "country" => row.country = (!val.is_empty()).then(|| val.clone()),
                c => {
                    if let Some(f) = c.strip_suffix("_5k").filter(|f| NOVELTY_FIELDS.contains(f)) {
                        novelty_set(&mut row.novelty_5k, f, int(val)?);
                    } else if let Some(f) = c.strip_suffix("_cat").filter(|f| NOVELTY_FIELDS.contains(f)) {
                        has_cat |= !val.is_empty();
                        novelty_set(&mut cat, f, int(val)?);
                    } else if NOVELTY_FIELDS.contains(&c) {
                        novelty_set(&mut row.novelty, c, int(val)?);
                    } else if let Some(v) = num(val)? {
                        row.extra.insert(c.to_string(), v);
                    }
                }
            }
        }
        row.novelty_cat = has_cat.then_some(cat);
        Ok(row)
    }
}

/// Adds `{variable}_lag{k}`: the value from quarter `q - k` of the same
/// user, missing when that quarter has no row. `k = 0` copies the column.
pub fn lag_regressor(rows: &mut [PanelRow], variable: &str, k: i64) -> String {
    let name = format!("{variable}_lag{k}");
    let lookup: BTreeMap<(String, Quarter), Option<f64>> = rows
        .iter()
        .filter_map(|r| r.quarter.map(|q| ((r.user_id.clone(), q), r.get(variable))))
        .collect();
    for r in rows.iter_mut() {
        let v = r
            .quarter
            .and_then(|q| lookup.get(&(r.user_id.clone(), q.offset(-k))).copied().flatten());
        r.set(&name, v);
    }
    name
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanelConfig {
    pub min_functions: usize,
    pub max_fill: usize,
    pub burn_in_quarters: i64,
    pub top_k: usize,
    /// Library → category label for the `_cat` outcomes.
    pub categories: Option<BTreeMap<String, String>>,
    pub require_categories: bool,
    /// Function-window sizes for `ai_k{k}` columns.
    pub ma_windows: Vec<usize>,
}

impl Default for PanelConfig {
    fn default() -> Self {
        PanelConfig {
            min_functions: MIN_FUNCTIONS,
            max_fill: MAX_FILL_QUARTERS,
            burn_in_quarters: BURN_IN_QUARTERS,
            top_k: TOP_K_LIBRARIES,
            categories: None,
            require_categories: false,
            ma_windows: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct PanelDiagnostics {
    pub users_seen: usize,
    pub users_without_profile: usize,
    pub bots_dropped: usize,
    pub users_kept: usize,
    pub rows: usize,
    pub cells_with_ai_share: usize,
    pub cells_below_min_functions: usize,
    pub cells_forward_filled: usize,
    pub libraries_without_category: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub rows: Vec<PanelRow>,
    /// Names of the extra columns, sorted.
    pub extra_columns: Vec<String>,
    pub diagnostics: PanelDiagnostics,
}

impl Panel {
    pub fn header(&self) -> Vec<String> {
        let mut h = PanelRow::base_columns();
        h.extend(self.extra_columns.iter().cloned());
        h
    }

    pub fn from_rows(rows: Vec<PanelRow>) -> Self {
        let extra: BTreeSet<String> = rows.iter().flat_map(|r| r.extra.keys().cloned()).collect();
        Panel { rows, extra_columns: extra.into_iter().collect(), diagnostics: PanelDiagnostics::default() }
    }

    pub fn refresh_extra_columns(&mut self) {
        let extra: BTreeSet<String> = self.rows.iter().flat_map(|r| r.extra.keys().cloned()).collect();
        self.extra_columns = extra.into_iter().collect();
    }
}

/// Libraries ranked by the number of distinct projects adding them; the
/// first `k` (ties by name).
pub fn top_libraries(commits: &[CommitMeta], k: usize) -> BTreeSet<String> {
    let mut projects: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for c in commits {
        for lib in &c.imports_added {
            projects.entry(lib).or_default().insert(&c.project_id);
        }
    }
    let mut ranked: Vec<(&str, usize)> = projects.into_iter().map(|(l, p)| (l, p.len())).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.into_iter().take(k).map(|(l, _)| l.to_string()).collect()
}

struct UserInput<'a> {
    profile: &'a UserProfile,
    commits: Vec<&'a CommitMeta>,
    functions: Vec<&'a ScoredFunction>,
}

/// Builds the panel: one row per kept user and calendar quarter from the
/// user's first to last active quarter. `params_of` maps a country (empty
/// when unknown) to confusion parameters.
pub fn build_panel<F>(
    commits: &[CommitMeta],
    functions: &[ScoredFunction],
    profiles: &[UserProfile],
    params_of: F,
    cfg: &PanelConfig,
) -> Result<Panel>
where
    F: Fn(&str) -> Option<CorrectionParams> + Sync,
{
    if cfg.require_categories && cfg.categories.is_none() {
        return Err(Error::MissingCategoryMap);
    }
    let mut diag = PanelDiagnostics::default();
    let profile_of: BTreeMap<&str, &UserProfile> = profiles.iter().map(|p| (p.user_id.as_str(), p)).collect();
    let top = top_libraries(commits, cfg.top_k);

    let mut users: BTreeMap<&str, (Vec<&CommitMeta>, Vec<&ScoredFunction>)> = BTreeMap::new();
    for c in commits {
        users.entry(&c.user_id).or_default().0.push(c);
    }
    for f in functions {
        users.entry(&f.user_id).or_default().1.push(f);
    }
    diag.users_seen = users.len();
    let mut inputs = Vec::new();
    for (user, (mut cs, mut fs)) in users {
        let Some(profile) = profile_of.get(user) else {
            diag.users_without_profile += 1;
            continue;
        };
        if profile.is_bot() {
            diag.bots_dropped += 1;
            continue;
        }
        cs.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.commit_id.cmp(&b.commit_id)));
        fs.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.change_id.cmp(&b.change_id)));
        inputs.push(UserInput { profile, commits: cs, functions: fs });
    }
    diag.users_kept = inputs.len();

    if let Some(cats) = &cfg.categories {
        let libs: BTreeSet<&String> = commits.iter().flat_map(|c| &c.imports_added).collect();
        diag.libraries_without_category = libs.iter().filter(|l| !cats.contains_key(**l)).count();
    }

    let built: Vec<Result<(Vec<PanelRow>, [usize; 3])>> = inputs
        .par_iter()
        .map(|u| user_rows(u, &top, &params_of, cfg))
        .collect();
    let mut rows = Vec::new();
    let mut missing: BTreeSet<String> = BTreeSet::new();
    for r in built {
        match r {
            Ok((mut rs, counts)) => {
                diag.cells_with_ai_share += counts[0];
                diag.cells_below_min_functions += counts[1];
                diag.cells_forward_filled += counts[2];
                rows.append(&mut rs);
            }
            Err(Error::MissingParams(g)) => missing.extend(g),
            Err(e) => return Err(e),
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingParams(missing.into_iter().collect()));
    }
    diag.rows = rows.len();
    let mut panel = Panel::from_rows(rows);
    panel.diagnostics = diag;
    Ok(panel)
}

fn map_sets<F: Fn(&String) -> Option<String>>(
    sets: &BTreeMap<Quarter, Vec<BTreeSet<String>>>,
    f: F,
) -> BTreeMap<Quarter, Vec<BTreeSet<String>>> {
    sets.iter()
        .map(|(q, v)| (*q, v.iter().map(|s| s.iter().filter_map(&f).collect()).collect()))
        .collect()
}

fn user_rows<F>(
    u: &UserInput<'_>,
    top: &BTreeSet<String>,
    params_of: &F,
    cfg: &PanelConfig,
) -> Result<(Vec<PanelRow>, [usize; 3])>
where
    F: Fn(&str) -> Option<CorrectionParams>,
{
    let quarters_seen: BTreeSet<Quarter> = u
        .commits
        .iter()
        .map(|c| Quarter::of(&c.timestamp))
        .chain(u.functions.iter().map(|f| Quarter::of(&f.timestamp)))
        .collect();
    let (Some(first), Some(last)) = (quarters_seen.first(), quarters_seen.last()) else {
        return Ok((Vec::new(), [0; 3]));
    };
    let quarters: Vec<Quarter> = (first.index()..=last.index()).map(Quarter::from_index).collect();
    let country = u
        .profile
        .country
        .clone()
        .or_else(|| u.commits.iter().rev().find_map(|c| c.country.clone()));
    let params = params_of(country.as_deref().unwrap_or(""));

    let mut n_fun: BTreeMap<Quarter, (usize, usize)> = BTreeMap::new();
    for f in &u.functions {
        let e = n_fun.entry(Quarter::of(&f.timestamp)).or_default();
        e.0 += 1;
        e.1 += usize::from(f.detected);
    }
    let mut counts = [0usize; 3];
    let mut raw = Vec::with_capacity(quarters.len());
    for q in &quarters {
        let (n, hits) = n_fun.get(q).copied().unwrap_or((0, 0));
        let share = if n >= cfg.min_functions && n > 0 {
            let p = params
                .as_ref()
                .ok_or_else(|| Error::MissingParams(vec![country.clone().unwrap_or_default()]))?;
            counts[0] += 1;
            aggregate_ai_share(n, hits, p, cfg.min_functions)?
        } else {
            if n > 0 {
                counts[1] += 1;
            }
            None
        };
        raw.push(share);
    }
    let filled = forward_fill(&raw, cfg.max_fill);
    counts[2] = filled.iter().filter(|f| f.1).count();

    let mut per_q: BTreeMap<Quarter, (u64, u64, u64)> = BTreeMap::new();
    let mut sets: BTreeMap<Quarter, Vec<BTreeSet<String>>> = BTreeMap::new();
    for c in &u.commits {
        let q = Quarter::of(&c.timestamp);
        let e = per_q.entry(q).or_default();
        e.0 += 1;
        e.1 += u64::from(c.n_files >= 2);
        e.2 += u64::from(!c.imports_added.is_empty());
        sets.entry(q).or_default().push(c.imports_added.clone());
    }
    let nov = novelty_by_quarter(&quarters, &sets, cfg.burn_in_quarters);
    let sets_5k = map_sets(&sets, |l| top.contains(l).then(|| l.clone()));
    let nov_5k = novelty_by_quarter(&quarters, &sets_5k, cfg.burn_in_quarters);
    let nov_cat = cfg.categories.as_ref().map(|cats| {
        let sets_cat = map_sets(&sets, |l| cats.get(l).cloned());
        novelty_by_quarter(&quarters, &sets_cat, cfg.burn_in_quarters)
    });

    let first_year = chrono::Datelike::year(&u.profile.first_activity);
    let mut rows: Vec<PanelRow> = quarters
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let (n_all, n_mult, n_imp) = per_q.get(q).copied().unwrap_or_default();
            PanelRow {
                user_id: u.profile.user_id.clone(),
                quarter: Some(*q),
                ai_share: filled[i].0,
                ai_share_filled: filled[i].1,
                ai_share_lag1: (i > 0).then(|| filled[i - 1].0).flatten(),
                n_functions: n_fun.get(q).map_or(0, |v| v.0 as u64),
                n_all,
                n_mult,
                n_imp,
                novelty: nov[i],
                novelty_5k: nov_5k[i],
                novelty_cat: nov_cat.as_ref().map(|n| n[i]),
                experience_years: (q.year - first_year).max(0),
                gender: u.profile.gender,
                country: country.clone(),
                extra: BTreeMap::new(),
            }
        })
        .collect();

    if !cfg.ma_windows.is_empty() {
        let p = params
            .as_ref()
            .ok_or_else(|| Error::MissingParams(vec![country.clone().unwrap_or_default()]))?;
        let values: Vec<(DateTime<Utc>, f64)> = u
            .functions
            .iter()
            .map(|f| Ok((f.timestamp, correct_prevalence(f64::from(u8::from(f.detected)), p)?)))
            .collect::<Result<_>>()?;
        for &k in &cfg.ma_windows {
            let series = moving_average_ai(&u.profile.user_id, &values, k)?;
            let at = interpolate_to_quarter(&series, &quarters);
            let col = format!("ai_k{k}");
            for (row, v) in rows.iter_mut().zip(&at) {
                row.set(&col, *v);
            }
            lag_regressor(&mut rows, &col, 1);
        }
    }
    Ok((rows, counts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use proptest::prelude::*;

    fn profile(id: &str, total: u64, max_q: u64) -> UserProfile {
        UserProfile {
            user_id: id.into(),
            first_activity: Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap(),
            total_commits: total,
            max_quarter_commits: max_q,
            country: Some("US".into()),
            gender: Gender::Unknown,
            display_name_inferred: false,
        }
    }

    fn us() -> CorrectionParams {
        CorrectionParams::new(0.9550, 0.2321)
    }

    #[test]
    fn bot_boundaries() {
        let kept = filter_bots(&[profile("a", 10_000, 5), profile("b", 5, 2001), profile("c", 10_001, 1)]);
        assert_eq!(kept.into_iter().collect::<Vec<_>>(), vec!["a"]);
        assert!(filter_bots(&[]).is_empty());
    }

    #[test]
    fn share_rules() {
        assert_eq!(aggregate_ai_share(9, 3, &us(), 10).unwrap(), None);
        assert_eq!(aggregate_ai_share(0, 0, &us(), 10).unwrap(), None);
        let v = aggregate_ai_share(10, 3, &us(), 10).unwrap().unwrap();
        assert!((v - (0.3 - 0.2321) / 0.7229).abs() < 1e-12);
        assert!((v - 0.0939).abs() < 5e-5);
    }

    #[test]
    fn fill_rules() {
        let s = [Some(0.1), None, None, None];
        let f = forward_fill(&s, 2);
        assert_eq!(f, vec![(Some(0.1), false), (Some(0.1), true), (Some(0.1), true), (None, false)]);
        let full = [Some(0.1), Some(0.2)];
        assert_eq!(forward_fill(&full, 2), vec![(Some(0.1), false), (Some(0.2), false)]);
        assert_eq!(forward_fill(&[None, Some(0.3)], 2)[0], (None, false));
    }

    fn set(libs: &[&str]) -> BTreeSet<String> {
        libs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn novelty_rules() {
        let q0 = Quarter::new(2021, 1).unwrap();
        let quarters: Vec<Quarter> = (0..6).map(|i| q0.offset(i)).collect();
        let mut sets = BTreeMap::new();
        sets.insert(quarters[0], vec![set(&["A", "B"]), set(&["A"])]);
        sets.insert(quarters[4], vec![set(&["A"])]);
        sets.insert(quarters[5], vec![set(&["A", "C"]), set(&[])]);
        let n = novelty_by_quarter(&quarters, &sets, 4);
        assert_eq!((n[0].lib_use, n[0].combo_use, n[0].pair_use), (2, 2, 1));
        assert_eq!(n[0].lib_entry, None);
        assert_eq!(n[3].lib_entry, None);
        assert_eq!((n[4].lib_use, n[4].lib_entry), (1, Some(0)));
        assert_eq!(n[4].combo_entry, Some(0));
        assert_eq!((n[5].lib_entry, n[5].combo_entry, n[5].pair_entry), (Some(1), Some(1), Some(1)));
    }

    #[test]
    fn lags() {
        let q = Quarter::new(2022, 1).unwrap();
        let mk = |user: &str, q: Quarter, v: f64| PanelRow {
            user_id: user.into(),
            quarter: Some(q),
            ai_share: Some(v),
            ..Default::default()
        };
        let mut rows = vec![mk("a", q, 0.1), mk("a", q.offset(1), 0.2), mk("b", q, 0.5), mk("b", q.offset(2), 0.7)];
        let col = lag_regressor(&mut rows, "ai_share", 1);
        let got: Vec<Option<f64>> = rows.iter().map(|r| r.get(&col)).collect();
        assert_eq!(got, vec![None, Some(0.1), None, None]);
        let col0 = lag_regressor(&mut rows, "ai_share", 0);
        assert!(rows.iter().all(|r| r.get(&col0) == r.ai_share));
    }

    fn ts(y: i32, m: u32, d: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(y, m, d, 12, 0, 0).unwrap()
    }

    fn commit(id: &str, user: &str, t: DateTime<Utc>, files: usize, libs: &[&str]) -> CommitMeta {
        CommitMeta {
            commit_id: id.into(),
            user_id: user.into(),
            project_id: format!("p-{user}"),
            timestamp: t,
            country: None,
            n_files: files,
            n_python_files: files,
            imports_added: set(libs),
        }
    }

    fn fixture() -> (Vec<CommitMeta>, Vec<ScoredFunction>, Vec<UserProfile>) {
        let commits = vec![
            commit("c1", "u1", ts(2021, 1, 5), 1, &["A", "B"]),
            commit("c2", "u1", ts(2021, 2, 5), 3, &["A"]),
            commit("c3", "u1", ts(2022, 3, 1), 2, &[]),
            commit("c4", "u2", ts(2021, 5, 1), 1, &["A"]),
            commit("c5", "bot", ts(2021, 5, 1), 1, &[]),
            commit("c6", "ghost", ts(2021, 5, 1), 1, &[]),
        ];
        let mut functions = Vec::new();
        for i in 0..12 {
            functions.push(ScoredFunction {
                user_id: "u1".into(),
                change_id: format!("f{i}"),
                timestamp: ts(2021, 1, 5),
                detected: i < 6,
            });
        }
        for i in 0..3 {
            functions.push(ScoredFunction {
                user_id: "u1".into(),
                change_id: format!("g{i}"),
                timestamp: ts(2021, 5, 5),
                detected: true,
            });
        }
        let profiles = vec![profile("u1", 3, 2), profile("u2", 1, 1), profile("bot", 20_000, 10)];
        (commits, functions, profiles)
    }

    #[test]
    fn panel_end_to_end() {
        let (c, f, p) = fixture();
        let panel = build_panel(&c, &f, &p, |_| Some(us()), &PanelConfig::default()).unwrap();
        let d = &panel.diagnostics;
        assert_eq!((d.users_seen, d.users_without_profile, d.bots_dropped, d.users_kept), (4, 1, 1, 2));
        let u1: Vec<&PanelRow> = panel.rows.iter().filter(|r| r.user_id == "u1").collect();
        assert_eq!(u1.len(), 5); // 2021Q1..2022Q1
        assert_eq!((u1[0].n_all, u1[0].n_mult, u1[0].n_imp), (2, 1, 2));
        let share = (0.5 - 0.2321) / 0.7229;
        assert!((u1[0].ai_share.unwrap() - share).abs() < 1e-12);
        // Q2 has 3 functions: filled from Q1, as is Q3; Q4 stays missing.
        assert!(u1[1].ai_share_filled && u1[2].ai_share_filled);
        assert_eq!(u1[3].ai_share, None);
        assert_eq!(u1[1].ai_share_lag1, u1[0].ai_share);
        assert_eq!(u1[4].quarter.unwrap().to_string(), "2022Q1");
        assert_eq!(u1[4].experience_years, 2);
        assert_eq!(u1[4].novelty.lib_entry, Some(0));
        assert!(u1[0].novelty_cat.is_none());
    }

    #[test]
    fn categories_required_when_requested() {
        let (c, f, p) = fixture();
        let cfg = PanelConfig { require_categories: true, ..Default::default() };
        assert!(matches!(build_panel(&c, &f, &p, |_| Some(us()), &cfg), Err(Error::MissingCategoryMap)));
        let cats: BTreeMap<String, String> = [("A", "x"), ("B", "x")].iter().map(|(a, b)| (a.to_string(), b.to_string())).collect();
        let cfg = PanelConfig { categories: Some(cats), require_categories: true, ..Default::default() };
        let panel = build_panel(&c, &f, &p, |_| Some(us()), &cfg).unwrap();
        let cat = panel.rows[0].novelty_cat.unwrap();
        assert_eq!((cat.lib_use, cat.combo_use, cat.pair_use), (1, 1, 0));
    }

    #[test]
    fn missing_params_listed() {
        let (c, f, p) = fixture();
        match build_panel(&c, &f, &p, |_| None, &PanelConfig::default()) {
            Err(Error::MissingParams(g)) => assert_eq!(g, vec!["US"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn csv_fields_round_trip() {
        let (c, f, p) = fixture();
        let cfg = PanelConfig { ma_windows: vec![4], ..Default::default() };
        let panel = build_panel(&c, &f, &p, |_| Some(us()), &cfg).unwrap();
        let header = panel.header();
        assert!(header.contains(&"ai_k4".to_string()));
        for r in &panel.rows {
            let fields = r.to_fields(&panel.extra_columns);
            assert_eq!(&PanelRow::from_fields(&header, &fields).unwrap(), r);
        }
        assert_eq!(panel.rows[0].get("n_all_log1p"), Some(2f64.ln_1p()));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn counts_are_ordered_and_order_free(
            raw in proptest::collection::vec((0u8..3, 0u32..700, 1usize..4, proptest::collection::btree_set(0u8..6, 0..4)), 1..40),
            seed in any::<u64>()
        ) {
            let lib = |i: &u8| format!("L{i}");
            let commits: Vec<CommitMeta> = raw.iter().enumerate().map(|(i, (u, day, files, libs))| CommitMeta {
                commit_id: format!("c{i}"),
                user_id: format!("u{u}"),
                project_id: format!("p{}", i % 3),
                timestamp: ts(2020, 1, 1) + chrono::Duration::days(*day as i64),
                country: None,
                n_files: *files,
                n_python_files: *files,
                imports_added: libs.iter().map(lib).collect(),
            }).collect();
            let profiles: Vec<UserProfile> = (0..3).map(|u| profile(&format!("u{u}"), 1, 1)).collect();
            let cats: BTreeMap<String, String> = (0..6u8).map(|i| (lib(&i), format!("k{}", i % 2))).collect();
            let cfg = PanelConfig { top_k: 3, categories: Some(cats), ..Default::default() };
            let a = build_panel(&commits, &[], &profiles, |_| Some(us()), &cfg).unwrap();
            for r in &a.rows {
                for (n, nk) in [(&r.novelty, &r.novelty_5k), (&r.novelty, r.novelty_cat.as_ref().unwrap())] {
                    prop_assert!(nk.lib_use <= n.lib_use || std::ptr::eq(nk, r.novelty_cat.as_ref().unwrap()));
                    prop_assert!(nk.combo_use <= n.combo_use);
                }
                for nov in [&r.novelty, &r.novelty_5k, r.novelty_cat.as_ref().unwrap()] {
                    prop_assert!(nov.lib_entry.unwrap_or(0) <= nov.lib_use);
                    prop_assert!(nov.combo_entry.unwrap_or(0) <= nov.combo_use);
                    prop_assert!(nov.pair_entry.unwrap_or(0) <= nov.pair_use);
                }
            }
            let mut shuffled = commits.clone();
            use rand::{seq::SliceRandom, SeedableRng};
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let b = build_panel(&shuffled, &[], &profiles, |_| Some(us()), &cfg).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
