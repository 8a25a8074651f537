// SPDX-License-Identifier: Apache-2.0

//! Synthetic corpora with known ground truth, and end-to-end validation of
//! the estimation pipeline on them.
//!
//! Each user-quarter draws a latent AI share from a Beta distribution
//! around the adoption path. Commit counts are Poisson with log-mean
//! `ln(base) + beta * share(q-1) + user effect + quarter effect`, so the
//! `ln(1 + commits)` regression recovers `beta` only approximately.
//! Every function is AI-written with the latent share as probability and is
//! flagged with probability `tpr` (AI) or `fpr` (human).

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, Utc};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correction::{from_counts, CorrectionParams};
use crate::econometrics::{
    attenuation_extrapolate, fit_panel, interpolate_to_quarter, moving_average_ai, placebo_filter,
    Attenuation, AttenuationInput, DesignSpec, Model,
};
use crate::ingest::dump::write_commit_dump;
use crate::ingest::{extract_function_changes, sort_commits, CommitRecord, ExtractConfig, FileChange, FunctionChange};
use crate::panel::{build_panel, join_scores, lag_regressor, Gender, PanelConfig, PanelRow, UserProfile};
use crate::quarter::Quarter;
use crate::scoring::ScoreRecord;
use crate::seed;
use crate::{Error, Result};

const BOOTSTRAP_DRAWS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AdoptionPath {
    Flat { level: f64 },
    Linear { from: f64, to: f64 },
    Logistic { floor: f64, ceiling: f64, midpoint: f64, rate: f64 },
}

impl AdoptionPath {
    /// Mean AI share in quarter `t` of `n`.
    pub fn at(&self, t: usize, n: usize) -> f64 {
        match *self {
            AdoptionPath::Flat { level } => level,
            AdoptionPath::Linear { from, to } => {
                if n <= 1 {
                    from
                } else {
                    from + (to - from) * t as f64 / (n - 1) as f64
                }
            }
            AdoptionPath::Logistic { floor, ceiling, midpoint, rate } => {
                floor + (ceiling - floor) / (1.0 + (-(t as f64 - midpoint) * rate).exp())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimScenario {
    pub n_users: usize,
    pub start: Quarter,
    pub n_quarters: usize,
    pub adoption: AdoptionPath,
    /// Beta concentration of user-quarter shares around the path.
    pub concentration: f64,
    pub tpr: f64,
    pub fpr: f64,
    /// Effect of last quarter's AI share on log commit intensity.
    pub beta_true: f64,
    /// The effect applies to outcomes from the first quarter of this year
    /// on; earlier quarters form a placebo period.
    pub effect_start_year: Option<i32>,
    /// Mean commits per user-quarter at zero AI share.
    pub commit_intensity_base: f64,
    pub functions_per_commit: f64,
    pub user_effect_sd: f64,
    pub quarter_effect_sd: f64,
    pub country: String,
    pub n_libraries: usize,
    /// Probability that a commit adds an import.
    pub import_rate: f64,
    pub seed: u64,
    pub attenuation: Option<AttenuationScenario>,
}

impl Default for SimScenario {
    fn default() -> Self {
        SimScenario {
            n_users: 50,
            start: Quarter::new(2020, 1).unwrap(),
            n_quarters: 12,
            adoption: AdoptionPath::Flat { level: 0.3 },
            concentration: 2.0,
            tpr: 0.9550,
            fpr: 0.2321,
            beta_true: 0.12,
            effect_start_year: None,
            commit_intensity_base: 20.0,
            functions_per_commit: 2.0,
            user_effect_sd: 0.3,
            quarter_effect_sd: 0.1,
            country: "US".into(),
            n_libraries: 30,
            import_rate: 0.2,
            seed: 0,
            attenuation: None,
        }
    }
}

fn check_rate(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must lie in [0, 1]")))
    }
}

impl SimScenario {
    pub fn validate(&self) -> Result<()> {
        check_rate("tpr", self.tpr)?;
        check_rate("fpr", self.fpr)?;
        if self.tpr <= self.fpr {
            return Err(Error::invalid("tpr must exceed fpr"));
        }
        if self.n_users == 0 || self.n_quarters == 0 {
            return Err(Error::invalid("need at least one user and one quarter"));
        }
        if !(self.commit_intensity_base > 0.0) || !(self.functions_per_commit > 0.0) {
            return Err(Error::invalid("intensities must be positive"));
        }
        if !(self.concentration > 0.0) || self.user_effect_sd < 0.0 || self.quarter_effect_sd < 0.0 {
            return Err(Error::invalid("concentration must be positive and effect sds non-negative"));
        }
        check_rate("import_rate", self.import_rate)?;
        for t in 0..self.n_quarters {
            check_rate("adoption path", self.adoption.at(t, self.n_quarters))?;
        }
        if let Some(a) = &self.attenuation {
            a.validate()?;
        }
        Ok(())
    }

    pub fn params(&self) -> CorrectionParams {
        CorrectionParams::new(self.tpr, self.fpr)
    }

    pub fn quarters(&self) -> Vec<Quarter> {
        (0..self.n_quarters as i64).map(|t| self.start.offset(t)).collect()
    }

    fn effect_on(&self, q: Quarter) -> f64 {
        match self.effect_start_year {
            Some(y) if q.year < y => 0.0,
            _ => self.beta_true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TruthRecord {
    Cell {
        user_id: String,
        quarter: Quarter,
        share: f64,
        log_mean: f64,
        n_commits: u64,
        n_functions: u64,
        n_ai: u64,
        n_detected: u64,
    },
    Function {
        user_id: String,
        commit_id: String,
        path: String,
        qualified_name: String,
        quarter: Quarter,
        is_ai: bool,
        detected: bool,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimCorpus {
    /// Sorted by (timestamp, commit id).
    pub commits: Vec<CommitRecord>,
    pub truth: Vec<TruthRecord>,
    pub profiles: Vec<UserProfile>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SimFiles {
    pub dump: PathBuf,
    pub truth: PathBuf,
    pub profiles: PathBuf,
}

fn write_ndjson<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for it in items {
        serde_json::to_writer(&mut w, it).map_err(|e| Error::invalid(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

impl SimCorpus {
    /// Writes `commits.ndjson` (dump format), `truth.ndjson` and
    /// `profiles.ndjson` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<SimFiles> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = SimFiles {
            dump: dir.join("commits.ndjson"),
            truth: dir.join("truth.ndjson"),
            profiles: dir.join("profiles.ndjson"),
        };
        let f = File::create(&files.dump).map_err(|e| Error::io(&files.dump, e))?;
        write_commit_dump(BufWriter::new(f), &self.commits).map_err(|e| Error::io(&files.dump, e))?;
        write_ndjson(&files.truth, &self.truth)?;
        write_ndjson(&files.profiles, &self.profiles)?;
        Ok(files)
    }

    pub fn function_truth(&self) -> impl Iterator<Item = (&str, &str, &str, bool, bool)> {
        self.truth.iter().filter_map(|t| match t {
            TruthRecord::Function { commit_id, path, qualified_name, is_ai, detected, .. } => {
                Some((commit_id.as_str(), path.as_str(), qualified_name.as_str(), *is_ai, *detected))
            }
            TruthRecord::Cell { .. } => None,
        })
    }
}

fn beta_share(rng: &mut ChaCha8Rng, mean: f64, kappa: f64) -> f64 {
    let m = mean.clamp(1e-4, 1.0 - 1e-4);
    Beta::new(m * kappa, (1.0 - m) * kappa).expect("positive shape").sample(rng)
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive mean").sample(rng) as u64
}

fn normal(rng: &mut ChaCha8Rng, sd: f64) -> f64 {
    if sd == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sd).expect("finite sd").sample(rng)
}

struct UserSim {
    commits: Vec<CommitRecord>,
    truth: Vec<TruthRecord>,
    profile: Option<UserProfile>,
}

fn simulate_user(sc: &SimScenario, u: usize, quarter_effects: &[f64]) -> UserSim {
    let mut rng = seed::rng(sc.seed, &format!("user/{u}"));
    let user_id = format!("sim-u{u:05}");
    let project_id = format!("sim-p{u:05}");
    let alpha = normal(&mut rng, sc.user_effect_sd);
    let quarters = sc.quarters();
    let n = quarters.len();
    // share[0] is the quarter before the first one.
    let shares: Vec<f64> = (0..=n)
        .map(|t| beta_share(&mut rng, sc.adoption.at(t.saturating_sub(1), n), sc.concentration))
        .collect();
    let mut commits = Vec::new();
    let mut truth = Vec::new();
    let mut per_q = Vec::with_capacity(n);
    for (t, q) in quarters.iter().enumerate() {
        let share = shares[t + 1];
        let log_mean = sc.commit_intensity_base.ln() + sc.effect_on(*q) * shares[t] + alpha + quarter_effects[t];
        let n_commits = poisson(&mut rng, log_mean.exp());
        per_q.push(n_commits);
        let span = (q.end() - q.start()).num_seconds();
        let (mut n_fn, mut n_ai, mut n_det) = (0u64, 0u64, 0u64);
        for j in 0..n_commits {
            let ts = q.start() + Duration::seconds(rng.random_range(0..span));
            let commit_id = seed::stable_id(&["sim", &sc.seed.to_string(), &user_id, &q.to_string(), &j.to_string()]);
            let k = poisson(&mut rng, sc.functions_per_commit);
            let import = (sc.n_libraries > 0 && rng.random::<f64>() < sc.import_rate)
                .then(|| format!("lib{:02}", rng.random_range(0..sc.n_libraries)));
            let mut files = Vec::new();
            if k > 0 || import.is_some() {
                let path = format!("{user_id}/q{}_{j}.py", q.index());
                let mut text = String::new();
                if let Some(lib) = &import {
                    text.push_str(&format!("import {lib}\n\n"));
                }
                for i in 0..k {
                    let name = format!("f{i}");
                    let is_ai = rng.random::<f64>() < share;
                    let detected = rng.random::<f64>() < if is_ai { sc.tpr } else { sc.fpr };
                    n_fn += 1;
                    n_ai += u64::from(is_ai);
                    n_det += u64::from(detected);
                    text.push_str(&format!("def {name}(x):\n    return x + {i}\n\n"));
                    truth.push(TruthRecord::Function {
                        user_id: user_id.clone(),
                        commit_id: commit_id.clone(),
                        path: path.clone(),
                        qualified_name: name,
                        quarter: *q,
                        is_ai,
                        detected,
                    });
                }
                files.push(FileChange::new(path, None, Some(text)));
            }
            if files.is_empty() || rng.random::<f64>() < 0.3 {
                files.push(FileChange::new(format!("{user_id}/notes_{}_{j}.md", q.index()), None, Some("note\n".into())));
            }
            commits.push(CommitRecord {
                commit_id,
                user_id: user_id.clone(),
                project_id: project_id.clone(),
                timestamp: ts,
                country: Some(sc.country.clone()),
                parents: Vec::new(),
                files,
            });
        }
        truth.push(TruthRecord::Cell {
            user_id: user_id.clone(),
            quarter: *q,
            share,
            log_mean,
            n_commits,
            n_functions: n_fn,
            n_ai,
            n_detected: n_det,
        });
    }
    let profile = commits.iter().map(|c| c.timestamp).min().map(|first| UserProfile {
        user_id: user_id.clone(),
        first_activity: first,
        total_commits: commits.len() as u64,
        max_quarter_commits: per_q.iter().copied().max().unwrap_or(0),
        country: Some(sc.country.clone()),
        gender: Gender::Unknown,
        display_name_inferred: false,
    });
    UserSim { commits, truth, profile }
}

/// Draws a corpus. Identical scenarios give identical corpora.
pub fn simulate_corpus(sc: &SimScenario) -> Result<SimCorpus> {
    sc.validate()?;
    let mut qrng = seed::rng(sc.seed, "quarters");
    let quarter_effects: Vec<f64> = (0..sc.n_quarters).map(|_| normal(&mut qrng, sc.quarter_effect_sd)).collect();
    let users: Vec<UserSim> = (0..sc.n_users)
        .into_par_iter()
        .map(|u| simulate_user(sc, u, &quarter_effects))
        .collect();
    let mut corpus = SimCorpus { commits: Vec::new(), truth: Vec::new(), profiles: Vec::new() };
    for u in users {
        corpus.commits.extend(u.commits);
        corpus.truth.extend(u.truth);
        corpus.profiles.extend(u.profile);
    }
    sort_commits(&mut corpus.commits);
    Ok(corpus)
}

/// Detection flags of `n` functions with AI share `y`, as a hit count.
pub fn simulate_detections(n: usize, y: f64, params: &CorrectionParams, seed: u64) -> usize {
    let mut rng = seed::rng(seed, "detections");
    (0..n)
        .filter(|_| {
            let p = if rng.random::<f64>() < y { params.tpr } else { params.fpr };
            rng.random::<f64>() < p
        })
        .count()
}

/// Scores mined functions with the simulator's flags (1 or 0), matched on
/// commit, path and qualified name.
pub fn flag_scores(functions: &[FunctionChange], corpus: &SimCorpus, scored_at: DateTime<Utc>) -> Vec<ScoreRecord> {
    let flags: HashMap<(&str, &str, &str), bool> =
        corpus.function_truth().map(|(c, p, q, _, d)| ((c, p, q), d)).collect();
    functions
        .iter()
        .map(|f| ScoreRecord {
            function_id: f.change_id.clone(),
            p_ai: flags
                .get(&(f.commit_id.as_str(), f.path.as_str(), f.qualified_name.as_str()))
                .map(|d| if *d { 1.0 } else { 0.0 }),
            scorer_id: "flags".into(),
            scored_at,
        })
        .collect()
}

/// Attenuation experiment: per-function measurements are the user-quarter
/// AI level plus IID noise; the outcome responds to last quarter's level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttenuationScenario {
    pub n_users: usize,
    pub n_quarters: usize,
    pub functions_per_quarter: usize,
    pub beta_true: f64,
    pub mean_ai: f64,
    /// Within-user variance of the true AI level.
    pub sigma_ai_sq: f64,
    /// Variance of per-function measurement noise.
    pub sigma_eta_sq: f64,
    pub outcome_noise_sd: f64,
    pub k_values: Vec<usize>,
}

impl Default for AttenuationScenario {
    fn default() -> Self {
        AttenuationScenario {
            n_users: 300,
            n_quarters: 8,
            functions_per_quarter: 64,
            beta_true: 0.5,
            mean_ai: 0.3,
            sigma_ai_sq: 0.04,
            sigma_eta_sq: 0.04,
            outcome_noise_sd: 0.1,
            k_values: vec![4, 8, 16, 32],
        }
    }
}

impl AttenuationScenario {
    pub fn validate(&self) -> Result<()> {
        if self.n_users < 2 || self.n_quarters < 3 || self.functions_per_quarter == 0 {
            return Err(Error::invalid("attenuation scenario needs 2 users, 3 quarters and some functions"));
        }
        if self.k_values.len() < 2 || self.k_values.contains(&0) {
            return Err(Error::invalid("attenuation scenario needs at least two positive k"));
        }
        if self.sigma_ai_sq <= 0.0 || self.sigma_eta_sq < 0.0 || self.outcome_noise_sd < 0.0 {
            return Err(Error::invalid("attenuation variances must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttenuationRun {
    pub k_values: Vec<usize>,
    pub b_hat: Vec<f64>,
    pub se: Vec<f64>,
    pub n_obs: usize,
    pub fit: Attenuation,
}

pub fn simulate_attenuation(sc: &AttenuationScenario, seed_value: u64) -> Result<AttenuationRun> {
    sc.validate()?;
    let start = Quarter::new(2020, 1)?;
    let quarters: Vec<Quarter> = (0..sc.n_quarters as i64).map(|t| start.offset(t)).collect();
    let mut qrng = seed::rng(seed_value, "attenuation/quarters");
    let tau: Vec<f64> = quarters.iter().map(|_| normal(&mut qrng, 0.1)).collect();
    let (sd_ai, sd_eta) = (sc.sigma_ai_sq.sqrt(), sc.sigma_eta_sq.sqrt());
    let per_user: Vec<Result<Vec<PanelRow>>> = (0..sc.n_users)
        .into_par_iter()
        .map(|u| {
            let mut rng = seed::rng(seed_value, &format!("attenuation/user/{u}"));
            let alpha = normal(&mut rng, 0.5);
            let level: Vec<f64> = quarters.iter().map(|_| sc.mean_ai + normal(&mut rng, sd_ai)).collect();
            let mut values = Vec::with_capacity(quarters.len() * sc.functions_per_quarter);
            for (t, q) in quarters.iter().enumerate() {
                let len = (q.end() - q.start()).num_seconds();
                for i in 0..sc.functions_per_quarter {
                    let at = (2 * i as i64 + 1) * len / (2 * sc.functions_per_quarter as i64);
                    values.push((q.start() + Duration::seconds(at), level[t] + normal(&mut rng, sd_eta)));
                }
            }
            let user_id = format!("att-u{u:05}");
            let mut rows: Vec<PanelRow> = quarters
                .iter()
                .enumerate()
                .map(|(t, q)| {
                    let mut r = PanelRow { user_id: user_id.clone(), quarter: Some(*q), ..Default::default() };
                    if t > 0 {
                        let y = sc.beta_true * level[t - 1] + alpha + tau[t] + normal(&mut rng, sc.outcome_noise_sd);
                        r.extra.insert("y".into(), y);
                    }
                    r
                })
                .collect();
            for &k in &sc.k_values {
                let series = moving_average_ai(&user_id, &values, k)?;
                let col = format!("ai_k{k}");
                for (r, v) in rows.iter_mut().zip(interpolate_to_quarter(&series, &quarters)) {
                    r.set(&col, v);
                }
                lag_regressor(&mut rows, &col, 1);
            }
            Ok(rows)
        })
        .collect();
    let mut rows = Vec::new();
    for r in per_user {
        rows.extend(r?);
    }
    let regressors: Vec<String> = sc.k_values.iter().map(|k| format!("ai_k{k}_lag1")).collect();
    let mut b_hat = Vec::new();
    let mut se = Vec::new();
    let mut n_obs = 0;
    for reg in &regressors {
        let model = Model {
            y: "y".into(),
            regressor: reg.clone(),
            design: DesignSpec::Baseline,
            require: regressors.clone(),
        };
        let (fit, _) = fit_panel(&rows, &model)?;
        b_hat.push(fit.coef(reg));
        se.push(fit.se(reg));
        n_obs = fit.n_obs;
    }
    let fit = attenuation_extrapolate(&AttenuationInput {
        k_values: sc.k_values.clone(),
        b_hat_by_k: b_hat.clone(),
        se_by_k: se.clone(),
        sigma_ai_sq: Some(sc.sigma_ai_sq),
        sigma_eta_sq: Some(sc.sigma_eta_sq),
    })?;
    Ok(AttenuationRun { k_values: sc.k_values.clone(), b_hat, se, n_obs, fit })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationOutcome {
    pub replication: usize,
    pub seed: u64,
    pub n_functions: usize,
    pub true_ai_fraction: f64,
    pub raw_detection_rate: f64,
    pub corrected: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub beta_hat: f64,
    pub beta_se: f64,
    pub beta_p: f64,
    pub n_obs: usize,
    pub placebo_beta: Option<f64>,
    pub placebo_p: Option<f64>,
    pub attenuation: Option<AttenuationRun>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageFailure {
    pub replication: usize,
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationSummary {
    pub replications_ok: usize,
    pub prevalence_bias_mean: f64,
    pub ci_coverage: f64,
    pub beta_mean: f64,
    pub beta_bias: f64,
    pub placebo_rejection_rate: Option<f64>,
    pub attenuation_beta_mean: Option<f64>,
    pub attenuation_relative_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub scenario: SimScenario,
    pub outcomes: Vec<ReplicationOutcome>,
    pub failures: Vec<StageFailure>,
    pub summary: ValidationSummary,
}

fn stage<T>(rep: usize, name: &str, r: Result<T>) -> std::result::Result<T, StageFailure> {
    r.map_err(|e| StageFailure { replication: rep, stage: name.into(), message: e.to_string() })
}

fn run_replication(sc: &SimScenario, rep: usize) -> std::result::Result<ReplicationOutcome, StageFailure> {
    let rep_seed = seed::derive(sc.seed, &format!("replication/{rep}"));
    let scenario = SimScenario { seed: rep_seed, ..sc.clone() };
    let corpus = stage(rep, "simulate", simulate_corpus(&scenario))?;

    let cfg = ExtractConfig::default();
    let mut metas = Vec::with_capacity(corpus.commits.len());
    let mut functions = Vec::new();
    for c in &corpus.commits {
        let ex = extract_function_changes(c, &cfg);
        metas.extend(ex.commit);
        functions.extend(ex.functions);
    }

    let scored_at = scenario.start.start();
    let scores = flag_scores(&functions, &corpus, scored_at);
    let (scored, stats) = join_scores(&functions, &scores, 0.5);
    if stats.unscored + stats.scorer_failures > 0 {
        return Err(StageFailure {
            replication: rep,
            stage: "score".into(),
            message: format!("{} mined functions have no simulated flag", stats.unscored + stats.scorer_failures),
        });
    }

    let params = scenario.params();
    let n = scored.len();
    let hits = scored.iter().filter(|f| f.detected).count();
    let n_ai = corpus.function_truth().filter(|t| t.3).count();
    let est = stage(
        rep,
        "correct",
        from_counts(hits, n, &params, BOOTSTRAP_DRAWS, seed::derive(rep_seed, "bootstrap")),
    )?;

    let panel = stage(
        rep,
        "panel",
        build_panel(&metas, &scored, &corpus.profiles, |_| Some(params.clone()), &PanelConfig::default()),
    )?;

    let model = Model::new("n_all_log1p", DesignSpec::Baseline);
    let reg = "ai_share_lag1";
    let treated: Vec<PanelRow> = match scenario.effect_start_year {
        Some(y) => panel.rows.iter().filter(|r| r.quarter.is_some_and(|q| q.year >= y)).cloned().collect(),
        None => panel.rows.clone(),
    };
    let (fit, _) = stage(rep, "regress", fit_panel(&treated, &model))?;
    let (placebo_beta, placebo_p) = match scenario.effect_start_year {
        Some(y) => {
            let (pre, _) = placebo_filter(&panel.rows, y);
            let (pf, _) = stage(rep, "placebo", fit_panel(&pre, &model))?;
            (Some(pf.coef(reg)), pf.term(reg).map(|t| t.p_value))
        }
        None => (None, None),
    };
    let attenuation = match &scenario.attenuation {
        Some(a) => Some(stage(rep, "attenuation", simulate_attenuation(a, seed::derive(rep_seed, "attenuation")))?),
        None => None,
    };
    let term = fit.term(reg).cloned().ok_or_else(|| StageFailure {
        replication: rep,
        stage: "regress".into(),
        message: "regressor missing from fit".into(),
    })?;
    Ok(ReplicationOutcome {
        replication: rep,
        seed: rep_seed,
        n_functions: n,
        true_ai_fraction: n_ai as f64 / n.max(1) as f64,
        raw_detection_rate: est.raw_detection_rate,
        corrected: est.corrected,
        ci_lo: est.ci_lo,
        ci_hi: est.ci_hi,
        beta_hat: term.estimate,
        beta_se: term.se,
        beta_p: term.p_value,
        n_obs: fit.n_obs,
        placebo_beta,
        placebo_p,
        attenuation,
    })
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Runs simulate, ingest, flag scoring, correction, panel construction and
/// regression for each replication. Stage failures are collected in the
/// report rather than returned.
pub fn validate_pipeline(sc: &SimScenario, replications: usize) -> Result<ValidationReport> {
    if replications == 0 {
        return Err(Error::invalid("at least one replication is required"));
    }
    sc.validate()?;
    let results: Vec<_> = (0..replications).into_par_iter().map(|r| run_replication(sc, r)).collect();
    let mut outcomes = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(o) => outcomes.push(o),
            Err(f) => failures.push(f),
        }
    }
    let k = outcomes.len() as f64;
    let beta_mean = mean(outcomes.iter().map(|o| o.beta_hat));
    let placebo: Vec<f64> = outcomes.iter().filter_map(|o| o.placebo_p).collect();
    let att: Vec<f64> = outcomes
        .iter()
        .filter_map(|o| o.attenuation.as_ref().map(|a| a.fit.beta_extrapolated))
        .collect();
    let att_mean = (!att.is_empty()).then(|| mean(att.iter().copied()));
    let att_truth = sc.attenuation.as_ref().map(|a| a.beta_true);
    let summary = ValidationSummary {
        replications_ok: outcomes.len(),
        prevalence_bias_mean: mean(outcomes.iter().map(|o| o.corrected - o.true_ai_fraction)),
        ci_coverage: outcomes
            .iter()
            .filter(|o| o.ci_lo <= o.true_ai_fraction && o.true_ai_fraction <= o.ci_hi)
            .count() as f64
            / k,
        beta_mean,
        beta_bias: beta_mean - sc.beta_true,
        placebo_rejection_rate: (!placebo.is_empty())
            .then(|| placebo.iter().filter(|p| **p < 0.05).count() as f64 / placebo.len() as f64),
        attenuation_beta_mean: att_mean,
        attenuation_relative_error: att_mean.zip(att_truth).map(|(m, t)| (m - t).abs() / t.abs()),
    };
    Ok(ValidationReport { scenario: sc.clone(), outcomes, failures, summary })
}

/// Per-user-quarter realized AI fractions from the ground truth.
pub fn realized_shares(truth: &[TruthRecord]) -> BTreeMap<(String, Quarter), (u64, u64, u64)> {
    truth
        .iter()
        .filter_map(|t| match t {
            TruthRecord::Cell { user_id, quarter, n_functions, n_ai, n_detected, .. } => {
                Some(((user_id.clone(), *quarter), (*n_functions, *n_ai, *n_detected)))
            }
            TruthRecord::Function { .. } => None,
        })
        .collect()
}
