// SPDX-License-Identifier: Apache-2.0

//! Misclassification-corrected prevalence.
//!
//! A detector with true-positive rate `tpr` and false-positive rate `fpr`
//! flags a share `d = y*tpr + (1-y)*fpr` of functions when the true share of
//! AI-written functions is `y`. Inverting that map gives the corrected
//! estimate. Values outside `[0, 1]` are returned as they are.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::seed;
use crate::stats::{mean, percentile_interval, t_two_sided_p, variance};
use crate::{Error, Result};

pub const MIN_SEPARATION: f64 = 1e-6;
pub const MIN_BOOTSTRAP: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionParams {
    pub tpr: f64,
    pub fpr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_key: Option<String>,
}

impl CorrectionParams {
    pub fn new(tpr: f64, fpr: f64) -> Self {
        CorrectionParams { tpr, fpr, group_key: None }
    }

    /// Detection rate implied by a true prevalence `y`.
    pub fn detection_rate(&self, y: f64) -> f64 {
        y * self.tpr + (1.0 - y) * self.fpr
    }

    fn check(&self) -> Result<()> {
        if self.tpr - self.fpr >= MIN_SEPARATION {
            Ok(())
        } else {
            Err(Error::NonIdentified { tpr: self.tpr, fpr: self.fpr })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrevalenceEstimate {
    pub raw_detection_rate: f64,
    pub corrected: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n_functions: usize,
}

impl PrevalenceEstimate {
    /// Estimates outside this band are worth a second look in reports.
    pub fn is_implausible(&self) -> bool {
        !(-0.05..=1.05).contains(&self.corrected)
    }
}

pub fn correct_prevalence(d_hat: f64, params: &CorrectionParams) -> Result<f64> {
    params.check()?;
    Ok((d_hat - params.fpr) / (params.tpr - params.fpr))
}

/// Percentile bootstrap over functions. Resampling `n` flags with
/// replacement only changes the number of detections, which is
/// Binomial(n, d̂); that count is drawn directly.
pub fn bootstrap_prevalence(
    detect_flags: &[bool],
    params: &CorrectionParams,
    b: usize,
    seed: u64,
) -> Result<PrevalenceEstimate> {
    let n = detect_flags.len();
    let hits = detect_flags.iter().filter(|&&f| f).count();
    from_counts(hits, n, params, b, seed)
}

/// As [`bootstrap_prevalence`], from a detection count.
pub fn from_counts(
    hits: usize,
    n: usize,
    params: &CorrectionParams,
    b: usize,
    seed: u64,
) -> Result<PrevalenceEstimate> {
    params.check()?;
    if n == 0 {
        return Err(Error::invalid("no functions to estimate prevalence from"));
    }
    if hits > n {
        return Err(Error::invalid("more detections than functions"));
    }
    if b < MIN_BOOTSTRAP {
        return Err(Error::invalid(format!(
            "at least {MIN_BOOTSTRAP} bootstrap replications required, got {b}"
        )));
    }
    let d_hat = hits as f64 / n as f64;
    let corrected = correct_prevalence(d_hat, params)?;
    let binom = Binomial::new(n as u64, d_hat).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<f64> = (0..b)
        .map(|_| {
            let d = binom.sample(&mut rng) as f64 / n as f64;
            (d - params.fpr) / (params.tpr - params.fpr)
        })
        .collect();
    let (lo, hi) = percentile_interval(draws, 0.95);
    Ok(PrevalenceEstimate {
        raw_detection_rate: d_hat,
        corrected,
        ci_lo: lo.min(corrected),
        ci_hi: hi.max(corrected),
        n_functions: n,
    })
}

/// One estimate per group. `params_of` maps a group to its confusion
/// parameters; every observed group must resolve. Each group bootstraps
/// with its own stream derived from `seed` and the group label.
pub fn group_prevalence<F>(
    obs: &[(String, bool)],
    params_of: F,
    b: usize,
    seed: u64,
) -> Result<BTreeMap<String, PrevalenceEstimate>>
where
    F: Fn(&str) -> Option<CorrectionParams> + Sync,
{
    let mut counts: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for (g, d) in obs {
        let e = counts.entry(g).or_default();
        e.0 += usize::from(*d);
        e.1 += 1;
    }
    let resolved: Vec<(&str, (usize, usize), Option<CorrectionParams>)> = counts
        .into_iter()
        .map(|(g, c)| (g, c, params_of(g)))
        .collect();
    let missing: Vec<String> = resolved
        .iter()
        .filter(|r| r.2.is_none())
        .map(|r| r.0.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingParams(missing));
    }
    resolved
        .into_par_iter()
        .map(|(g, (hits, n), p)| {
            let est = from_counts(hits, n, p.as_ref().unwrap(), b, group_seed(seed, g))?;
            Ok((g.to_string(), est))
        })
        .collect()
}

pub fn group_seed(seed: u64, group: &str) -> u64 {
    seed::derive(seed, group)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WelchTest {
    pub t: f64,
    pub df: f64,
    pub p_two_sided: f64,
}

pub fn welch_ttest(a: &[f64], b: &[f64]) -> Result<WelchTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::invalid("each sample needs at least two values"));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (variance(a), variance(b));
    let diff = mean(a) - mean(b);
    if va == 0.0 && vb == 0.0 && diff == 0.0 {
        return Ok(WelchTest { t: 0.0, df: na + nb - 2.0, p_two_sided: 1.0 });
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::invalid("sample with zero variance"));
    }
    let (sa, sb) = (va / na, vb / nb);
    let t = diff / (sa + sb).sqrt();
    let df = (sa + sb).powi(2) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    Ok(WelchTest { t, df, p_two_sided: t_two_sided_p(t, df) })
}
