// SPDX-License-Identifier: Apache-2.0

//! AI-probability scores for functions, and their evaluation against labels.

mod baseline;
mod external;
pub mod protocol;

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::correction::CorrectionParams;
use crate::stats::average_ranks;
use crate::{Error, Result};

pub use baseline::{logistic, train_baseline, BaselineModel, Standardization, TrainHyper, N_FEATURES};
pub use external::{ExternalScorer, DEFAULT_TIMEOUT};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    /// Id of the scored item. For mined functions this is the change id,
    /// which distinguishes the same function across commits.
    pub function_id: String,
    /// `None` when the scorer failed on the item.
    pub p_ai: Option<f64>,
    pub scorer_id: String,
    pub scored_at: DateTime<Utc>,
}

impl ScoreRecord {
    pub fn detected(&self, threshold: f64) -> Option<bool> {
        self.p_ai.map(|p| p >= threshold)
    }
}

pub enum Scorer {
    Builtin(BaselineModel),
    External(ExternalScorer),
}

impl Scorer {
    pub fn id(&self) -> String {
        match self {
            Scorer::Builtin(m) => format!("baseline-{}", m.training_seed),
            Scorer::External(e) => e.scorer_id().to_string(),
        }
    }
}

/// Scores `(id, code)` pairs, one record per input in input order.
pub fn score_functions(
    scorer: &mut Scorer,
    batch: &[(&str, &str)],
    scored_at: DateTime<Utc>,
) -> Result<Vec<ScoreRecord>> {
    if batch.is_empty() {
        return Ok(Vec::new());
    }
    let scorer_id = scorer.id();
    let probs: Vec<Option<f64>> = match scorer {
        Scorer::Builtin(model) => {
            if model.corpus.is_none() {
                return Err(Error::Scorer("model carries no corpus statistics".into()));
            }
            batch.iter().map(|(_, code)| model.score_code(code).ok()).collect()
        }
        Scorer::External(ext) => ext.score(batch)?,
    };
    Ok(batch
        .iter()
        .zip(probs)
        .map(|((id, _), p_ai)| ScoreRecord {
            function_id: id.to_string(),
            p_ai,
            scorer_id: scorer_id.clone(),
            scored_at,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub roc_auc: f64,
    pub tpr_at_threshold: f64,
    pub fpr_at_threshold: f64,
    pub f1_at_threshold: f64,
    pub threshold: f64,
    /// Mean score over positives; a threshold-free reading of the true
    /// positive rate.
    pub mean_p_positive: f64,
}

fn check_labels(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::invalid("scores and labels differ in length"));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::DegenerateLabels);
    }
    Ok((pos, labels.len() - pos))
}

/// ROC AUC from the rank-sum statistic; tied scores share average ranks.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (n1, n0) = check_labels(scores, labels)?;
    let ranks = average_ranks(scores);
    let r1: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    let (n1, n0) = (n1 as f64, n0 as f64);
    Ok((r1 - n1 * (n1 + 1.0) / 2.0) / (n1 * n0))
}

/// Labels: `true` means AI-written. Detection is `score >= threshold`.
pub fn evaluate(scores: &[f64], labels: &[bool], threshold: f64) -> Result<EvalMetrics> {
    let (n1, n0) = check_labels(scores, labels)?;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut sum_pos = 0.0;
    for (&s, &l) in scores.iter().zip(labels) {
        let d = s >= threshold;
        if l {
            sum_pos += s;
            tp += usize::from(d);
        } else {
            fp += usize::from(d);
        }
    }
    let f1 = if tp == 0 { 0.0 } else { 2.0 * tp as f64 / (2 * tp + fp + (n1 - tp)) as f64 };
    Ok(EvalMetrics {
        roc_auc: roc_auc(scores, labels)?,
        tpr_at_threshold: tp as f64 / n1 as f64,
        fpr_at_threshold: fp as f64 / n0 as f64,
        f1_at_threshold: f1,
        threshold,
        mean_p_positive: sum_pos / n1 as f64,
    })
}

pub fn calibrate_rates(scores: &[f64], labels: &[bool], threshold: f64) -> Result<CorrectionParams> {
    let m = evaluate(scores, labels, threshold)?;
    Ok(CorrectionParams::new(m.tpr_at_threshold, m.fpr_at_threshold))
}

/// Per-group confusion rates. A group whose labels are all one class gets
/// its own error; the other groups are unaffected.
pub fn calibrate_rates_by_group(
    scores: &[f64],
    labels: &[bool],
    groups: &[String],
    threshold: f64,
) -> Result<BTreeMap<String, Result<CorrectionParams>>> {
    if groups.len() != scores.len() {
        return Err(Error::invalid("groups and scores differ in length"));
    }
    let mut by: BTreeMap<&str, (Vec<f64>, Vec<bool>)> = BTreeMap::new();
    for ((s, l), g) in scores.iter().zip(labels).zip(groups) {
        let e = by.entry(g).or_default();
        e.0.push(*s);
        e.1.push(*l);
    }
    Ok(by
        .into_iter()
        .map(|(g, (s, l))| {
            let p = calibrate_rates(&s, &l, threshold).map(|mut p| {
                p.group_key = Some(g.to_string());
                p
            });
            (g.to_string(), p)
        })
        .collect())
}
