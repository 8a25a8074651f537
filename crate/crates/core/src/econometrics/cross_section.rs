// SPDX-License-Identifier: Apache-2.0

//! Pooled OLS on group dummies with heteroskedasticity-robust (HC1)
//! standard errors.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{aliased_columns, gram, invert, Term};
use crate::stats::t_two_sided_p;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossSectionFit {
    /// Intercept (the reference level's mean) first.
    pub terms: Vec<Term>,
    pub reference: String,
    pub n_obs: usize,
    pub r_squared: f64,
    pub se_type: String,
}

impl CrossSectionFit {
    pub fn coef(&self, name: &str) -> f64 {
        self.terms.iter().find(|t| t.name == name).map_or(f64::NAN, |t| t.estimate)
    }
}

/// Two-year experience bins, top-coded at 14.
pub fn experience_bin(years: i32) -> i32 {
    (years.max(0) / 2 * 2).min(14)
}

/// OLS with an intercept and HC1 covariance `n/(n-K) (X'X)^-1 (Σ x x' e²) (X'X)^-1`.
pub(crate) fn ols_hc1(y: &[f64], cols: &[Vec<f64>], names: &[String]) -> Result<(Vec<Term>, f64)> {
    let n = y.len();
    let k = cols.len();
    let aliased = aliased_columns(cols, names);
    if !aliased.is_empty() {
        return Err(Error::Singular(aliased));
    }
    if n <= k {
        return Err(Error::invalid("more regressors than observations"));
    }
    let xtx = gram(cols);
    let bread = invert(&xtx, names)?;
    let xty = DVector::from_fn(k, |a, _| cols[a].iter().zip(y).map(|(x, y)| x * y).sum());
    let beta = &bread * xty;
    let mut meat = DMatrix::<f64>::zeros(k, k);
    let mut ssr = 0.0;
    for i in 0..n {
        let xi = DVector::from_fn(k, |a, _| cols[a][i]);
        let e = y[i] - xi.dot(&beta);
        ssr += e * e;
        meat += &xi * xi.transpose() * (e * e);
    }
    let (nf, kf) = (n as f64, k as f64);
    let v = (&bread * meat * &bread) * (nf / (nf - kf));
    let my = y.iter().sum::<f64>() / nf;
    let sst: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let terms = names
        .iter()
        .enumerate()
        .map(|(a, name)| {
            let se = v[(a, a)].max(0.0).sqrt();
            let t_stat = beta[a] / se;
            Term {
                name: name.clone(),
                estimate: beta[a],
                se,
                t_stat,
                p_value: t_two_sided_p(t_stat, nf - kf),
            }
        })
        .collect();
    Ok((terms, if sst > 0.0 { 1.0 - ssr / sst } else { f64::NAN }))
}

/// Regresses `y` on dummies for every level except `reference`.
/// Dummy columns are named `{prefix}{level}` in level order.
pub fn cross_section_ols(
    y: &[f64],
    levels: &[String],
    reference: &str,
    prefix: &str,
) -> Result<CrossSectionFit> {
    if y.len() != levels.len() {
        return Err(Error::invalid("outcome and levels differ in length"));
    }
    let distinct: BTreeSet<&String> = levels.iter().collect();
    if distinct.len() < 2 {
        return Err(Error::invalid("at least two distinct levels are required"));
    }
    let mut names = vec!["intercept".to_string()];
    let mut cols = vec![vec![1.0; y.len()]];
    for lvl in distinct.iter().filter(|l| l.as_str() != reference) {
        names.push(format!("{prefix}{lvl}"));
        cols.push(levels.iter().map(|l| f64::from(u8::from(l == *lvl))).collect());
    }
    let (terms, r_squared) = ols_hc1(y, &cols, &names)?;
    Ok(CrossSectionFit {
        terms,
        reference: reference.to_string(),
        n_obs: y.len(),
        r_squared,
        se_type: "HC1".into(),
    })
}
