// SPDX-License-Identifier: Apache-2.0

//! Value calculators: the productivity effect implied by a coefficient and
//! an adoption rate, consumer surplus under perfectly elastic and perfectly
//! inelastic code supply, and the wage sum spent on programming tasks.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Wage-to-compensation ratio.
pub const WAGE_TO_COMPENSATION: f64 = 1.449;

/// Share of working time assumed for all tasks at each frequency level,
/// from "yearly or less" (1) to "hourly or more" (7).
pub const DISTRIBUTIVE_WEIGHTS: [f64; 7] = [0.0, 0.02, 0.05, 0.08, 0.1, 0.25, 0.50];
/// Relative duration of one task at each frequency level.
pub const RELEVANCE_WEIGHTS: [f64; 7] = [0.5, 1.0, 4.0, 48.0, 240.0, 480.0, 1920.0];

/// `exp(beta * adoption) - 1`.
pub fn productivity_delta(beta: f64, adoption: f64) -> f64 {
    (beta * adoption).exp_m1()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Elastic,
    Inelastic,
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "elastic" => Ok(Scenario::Elastic),
            "inelastic" => Ok(Scenario::Inelastic),
            _ => Err(Error::invalid(format!("unknown scenario `{s}`"))),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::Elastic => "elastic",
            Scenario::Inelastic => "inelastic",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurplusInputs {
    /// Proportional output gain.
    pub delta: f64,
    /// Price elasticity of demand for code (negative).
    pub eta: f64,
    /// Value of code before the gain.
    pub v1: f64,
    pub scenario: Scenario,
}

impl SurplusInputs {
    fn check(&self) -> Result<()> {
        if self.eta == 0.0 || self.eta.is_nan() {
            return Err(Error::invalid("demand elasticity must be non-zero"));
        }
        if !(self.v1 > 0.0) || !self.delta.is_finite() {
            return Err(Error::invalid("v1 must be positive and delta finite"));
        }
        Ok(())
    }

    pub fn surplus(&self) -> Result<f64> {
        match self.scenario {
            Scenario::Elastic => surplus_elastic(self.delta, self.eta, self.v1),
            Scenario::Inelastic => surplus_inelastic(self.delta, self.eta, self.v1),
        }
    }
}

/// Perfectly elastic supply: `-(delta/eta) v1 (1 + delta/2)`.
pub fn surplus_elastic(delta: f64, eta: f64, v1: f64) -> Result<f64> {
    SurplusInputs { delta, eta, v1, scenario: Scenario::Elastic }.check()?;
    if eta.is_infinite() {
        return Ok(0.0);
    }
    Ok(-(delta / eta) * v1 * (1.0 + delta / 2.0))
}

/// Perfectly inelastic supply: `delta v1 (1 + delta/(2 eta))`.
pub fn surplus_inelastic(delta: f64, eta: f64, v1: f64) -> Result<f64> {
    SurplusInputs { delta, eta, v1, scenario: Scenario::Inelastic }.check()?;
    Ok(delta * v1 * (1.0 + delta / (2.0 * eta)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightScheme {
    Distributive,
    Relevance,
}

impl FromStr for WeightScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "distributive" => Ok(WeightScheme::Distributive),
            "relevance" => Ok(WeightScheme::Relevance),
            _ => Err(Error::invalid(format!("unknown weight scheme `{s}`"))),
        }
    }
}

impl WeightScheme {
    pub fn weights(self) -> [f64; 7] {
        match self {
            WeightScheme::Distributive => DISTRIBUTIVE_WEIGHTS,
            WeightScheme::Relevance => RELEVANCE_WEIGHTS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRow {
    pub occupation_id: String,
    pub task_id: String,
    /// Share of workers performing the task at frequency levels 1 to 7.
    pub frequency_shares: [f64; 7],
    /// Fraction of the task spent programming.
    pub programming_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Occupation {
    pub occupation_id: String,
    pub annual_wage: f64,
    pub employment: f64,
}

/// One weighted survey respondent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicroRow {
    pub occupation_id: String,
    pub weight: f64,
    pub annual_wage: f64,
}

#[derive(Debug, Clone, Copy)]
pub enum WageSource<'a> {
    Aggregate(&'a [Occupation]),
    Microdata(&'a [MicroRow]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WageTaskTable {
    pub tasks: Vec<TaskRow>,
    pub scheme: WeightScheme,
    pub r: f64,
    /// Distributive scheme only: rescale the weights of occupied frequency
    /// levels so an occupation's time shares sum to one.
    pub renormalize: bool,
}

impl WageTaskTable {
    pub fn new(tasks: Vec<TaskRow>, scheme: WeightScheme) -> Self {
        WageTaskTable { tasks, scheme, r: WAGE_TO_COMPENSATION, renormalize: true }
    }

    fn check(&self) -> Result<()> {
        if !(self.r > 1.0) {
            return Err(Error::invalid("wage-to-compensation ratio must exceed 1"));
        }
        for t in &self.tasks {
            if t.frequency_shares.iter().any(|s| !(*s >= 0.0)) {
                return Err(Error::invalid(format!("task {}: negative frequency share", t.task_id)));
            }
            if !(0.0..=1.0).contains(&t.programming_share) {
                return Err(Error::invalid(format!("task {}: programming share outside [0, 1]", t.task_id)));
            }
        }
        Ok(())
    }
}

/// Time shares of one occupation's tasks, or `None` when the total task
/// weight is zero.
pub fn time_shares(tasks: &[&TaskRow], scheme: WeightScheme, renormalize: bool) -> Option<Vec<f64>> {
    let w = scheme.weights();
    match scheme {
        WeightScheme::Distributive => {
            let mut level_mass = [0.0; 7];
            for t in tasks {
                for (c, s) in t.frequency_shares.iter().enumerate() {
                    level_mass[c] += s;
                }
            }
            let occupied: f64 = (0..7).filter(|&c| level_mass[c] > 0.0).map(|c| w[c]).sum();
            if occupied <= 0.0 {
                return None;
            }
            let scale = if renormalize { 1.0 / occupied } else { 1.0 };
            Some(
                tasks
                    .iter()
                    .map(|t| {
                        (0..7)
                            .filter(|&c| level_mass[c] > 0.0)
                            .map(|c| w[c] * scale * t.frequency_shares[c] / level_mass[c])
                            .sum()
                    })
                    .collect(),
            )
        }
        WeightScheme::Relevance => {
            let raw: Vec<f64> = tasks
                .iter()
                .map(|t| t.frequency_shares.iter().zip(&w).map(|(s, w)| s * w).sum())
                .collect();
            let total: f64 = raw.iter().sum();
            (total > 0.0).then(|| raw.iter().map(|v| v / total).collect())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WageSum {
    pub total: f64,
    /// Programming time share per occupation.
    pub programming_time: BTreeMap<String, f64>,
    /// Programming wage sum per occupation, `r` included.
    pub by_occupation: BTreeMap<String, f64>,
    /// Occupations without task weight.
    pub excluded: Vec<String>,
}

/// `r * Σ_o wages_o * Σ_t time_t,o * programming_share_t,o`, where
/// `wages_o` is wage times employment or the weighted sum of respondents'
/// wages.
pub fn wage_sum(table: &WageTaskTable, source: WageSource<'_>) -> Result<WageSum> {
    table.check()?;
    let mut by_occ: BTreeMap<&str, Vec<&TaskRow>> = BTreeMap::new();
    for t in &table.tasks {
        by_occ.entry(&t.occupation_id).or_default().push(t);
    }
    let mut wages: BTreeMap<&str, f64> = BTreeMap::new();
    match source {
        WageSource::Aggregate(occs) => {
            for o in occs {
                *wages.entry(&o.occupation_id).or_default() += o.annual_wage * o.employment;
            }
        }
        WageSource::Microdata(rows) => {
            for r in rows {
                *wages.entry(&r.occupation_id).or_default() += r.weight * r.annual_wage;
            }
        }
    }
    let missing: Vec<&str> = by_occ.keys().filter(|o| !wages.contains_key(*o)).copied().collect();
    if !missing.is_empty() {
        return Err(Error::invalid(format!("no wage data for occupations: {}", missing.join(", "))));
    }
    let mut out = WageSum {
        total: 0.0,
        programming_time: BTreeMap::new(),
        by_occupation: BTreeMap::new(),
        excluded: Vec::new(),
    };
    for (occ, tasks) in &by_occ {
        let Some(shares) = time_shares(tasks, table.scheme, table.renormalize) else {
            out.excluded.push(occ.to_string());
            continue;
        };
        let prog: f64 = shares.iter().zip(tasks).map(|(s, t)| s * t.programming_share).sum();
        let value = table.r * wages[occ] * prog;
        out.programming_time.insert(occ.to_string(), prog);
        out.by_occupation.insert(occ.to_string(), value);
        out.total += value;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn task(occ: &str, id: &str, shares: [f64; 7], prog: f64) -> TaskRow {
        TaskRow { occupation_id: occ.into(), task_id: id.into(), frequency_shares: shares, programming_share: prog }
    }

    fn level(c: usize, v: f64) -> [f64; 7] {
        let mut s = [0.0; 7];
        s[c - 1] = v;
        s
    }

    #[test]
    fn delta_values() {
        assert!((productivity_delta(0.122, 0.286) - 0.0355).abs() < 5e-5);
        assert!((productivity_delta(0.122, 0.286) - ((0.122f64 * 0.286).exp() - 1.0)).abs() < 1e-15);
        assert_eq!(productivity_delta(0.122, 0.0), 0.0);
        assert_eq!(productivity_delta(0.0, 0.3), 0.0);
    }

    #[test]
    fn surplus_values() {
        let e = surplus_elastic(0.035, -0.3, 787.0).unwrap();
        assert!((e - 93.42).abs() < 0.005, "{e}");
        let i = surplus_inelastic(0.035, -0.3, 787.0).unwrap();
        assert!((i - 25.9).abs() < 0.05, "{i}");
        assert_eq!(surplus_elastic(0.0, -0.3, 787.0).unwrap(), 0.0);
        assert_eq!(surplus_inelastic(0.0, -0.3, 787.0).unwrap(), 0.0);
        assert_eq!(surplus_inelastic(0.035, f64::NEG_INFINITY, 787.0).unwrap(), 0.035 * 787.0);
        assert!(surplus_elastic(0.035, 0.0, 787.0).is_err());
        assert!(surplus_inelastic(0.035, 0.0, 787.0).is_err());
        let double = surplus_elastic(0.035, -0.3, 2.0 * 787.0).unwrap();
        assert!((double - 2.0 * e).abs() < 1e-12);
    }

    #[test]
    fn single_task_collapses() {
        let occ = [Occupation { occupation_id: "o".into(), annual_wage: 100_000.0, employment: 10.0 }];
        for scheme in [WeightScheme::Distributive, WeightScheme::Relevance] {
            let t = WageTaskTable::new(vec![task("o", "t", level(5, 0.4), 1.0)], scheme);
            let w = wage_sum(&t, WageSource::Aggregate(&occ)).unwrap();
            assert!((w.total - 1_449_000.0).abs() < 1e-6, "{scheme:?}: {}", w.total);
            let zero = WageTaskTable::new(vec![task("o", "t", level(5, 0.4), 0.0)], scheme);
            assert_eq!(wage_sum(&zero, WageSource::Aggregate(&occ)).unwrap().total, 0.0);
        }
    }

    #[test]
    fn level_six_split() {
        let a = task("o", "a", level(6, 30.0), 0.0);
        let b = task("o", "b", level(6, 10.0), 0.0);
        let s = time_shares(&[&a, &b], WeightScheme::Distributive, false).unwrap();
        assert!((s[0] - 0.75 * 0.25).abs() < 1e-15);
        assert!((s[1] - 0.25 * 0.25).abs() < 1e-15);
        let s = time_shares(&[&a, &b], WeightScheme::Distributive, true).unwrap();
        assert!((s[0] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn zero_weight_excluded_and_missing_wages() {
        let t = WageTaskTable::new(vec![task("o", "t", level(1, 1.0), 1.0)], WeightScheme::Distributive);
        let occ = [Occupation { occupation_id: "o".into(), annual_wage: 1.0, employment: 1.0 }];
        let w = wage_sum(&t, WageSource::Aggregate(&occ)).unwrap();
        assert_eq!(w.excluded, vec!["o"]);
        assert!(wage_sum(&t, WageSource::Aggregate(&[])).is_err());
    }

    #[test]
    fn microdata_matches_aggregate() {
        let tasks = vec![task("o", "a", [0.1, 0.0, 0.2, 0.3, 0.1, 0.2, 0.1], 0.4), task("o", "b", level(4, 0.5), 0.9)];
        let t = WageTaskTable::new(tasks, WeightScheme::Relevance);
        let agg = wage_sum(&t, WageSource::Aggregate(&[Occupation { occupation_id: "o".into(), annual_wage: 50_000.0, employment: 30.0 }])).unwrap();
        let micro: Vec<MicroRow> = (0..3)
            .map(|_| MicroRow { occupation_id: "o".into(), weight: 10.0, annual_wage: 50_000.0 })
            .collect();
        let m = wage_sum(&t, WageSource::Microdata(&micro)).unwrap();
        assert!((agg.total - m.total).abs() < 1e-6);
    }

    fn shares() -> impl Strategy<Value = [f64; 7]> {
        proptest::array::uniform7(0.0f64..1.0)
    }

    proptest! {
        #[test]
        fn surplus_bounds(delta in 0.001f64..0.5, eta in -20.0f64..-0.01, v1 in 1.0f64..1e4) {
            let i = surplus_inelastic(delta, eta, v1).unwrap();
            prop_assert!(i <= delta * v1);
            prop_assert!(surplus_elastic(delta, eta, v1).unwrap() > 0.0);
            // Closer to zero elasticity: larger elastic surplus, smaller inelastic one.
            prop_assert!(surplus_elastic(delta, eta / 2.0, v1).unwrap() > surplus_elastic(delta, eta, v1).unwrap());
            prop_assert!(surplus_inelastic(delta, eta * 2.0, v1).unwrap() > i);
        }

        #[test]
        fn relevance_shares_sum_to_one(rows in proptest::collection::vec(shares(), 1..12)) {
            let tasks: Vec<TaskRow> = rows.iter().enumerate().map(|(i, s)| task("o", &i.to_string(), *s, 0.5)).collect();
            let refs: Vec<&TaskRow> = tasks.iter().collect();
            if let Some(s) = time_shares(&refs, WeightScheme::Relevance, true) {
                prop_assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            if let Some(s) = time_shares(&refs, WeightScheme::Distributive, true) {
                prop_assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn splitting_occupation_invariant(rows in proptest::collection::vec((shares(), 0.0f64..1.0), 1..6), emp in 1.0f64..1e4) {
            let mk = |occ: &str| -> Vec<TaskRow> {
                rows.iter().enumerate().map(|(i, (s, p))| task(occ, &i.to_string(), *s, *p)).collect()
            };
            let one = WageTaskTable::new(mk("o"), WeightScheme::Distributive);
            let whole = wage_sum(&one, WageSource::Aggregate(&[Occupation { occupation_id: "o".into(), annual_wage: 6e4, employment: emp }])).unwrap();
            let mut split_tasks = mk("o1");
            split_tasks.extend(mk("o2"));
            let two = WageTaskTable::new(split_tasks, WeightScheme::Distributive);
            let halves = [
                Occupation { occupation_id: "o1".into(), annual_wage: 6e4, employment: emp / 2.0 },
                Occupation { occupation_id: "o2".into(), annual_wage: 6e4, employment: emp / 2.0 },
            ];
            let split = wage_sum(&two, WageSource::Aggregate(&halves)).unwrap();
            prop_assert!((whole.total - split.total).abs() <= 1e-9 * whole.total.abs().max(1.0));
        }
    }
}
