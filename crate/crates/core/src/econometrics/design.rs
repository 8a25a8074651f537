// SPDX-License-Identifier: Apache-2.0

//! Regressor designs on the user-quarter panel and the FE fit over them.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{twoway_fe_ols, FEFit, FeData};
use crate::panel::PanelRow;
use crate::quarter::Quarter;
use crate::{Error, Result};

/// Experience (years) from which a user counts as experienced.
pub const HIGH_EXPERIENCE_YEARS: i32 = 6;
pub const DEFAULT_PLACEBO_CUTOFF: i32 = 2022;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DesignSpec {
    Baseline,
    Interaction,
    Quintiles,
}

impl fmt::Display for DesignSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DesignSpec::Baseline => "baseline",
            DesignSpec::Interaction => "interaction",
            DesignSpec::Quintiles => "quintiles",
        })
    }
}

impl FromStr for DesignSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(DesignSpec::Baseline),
            "interaction" => Ok(DesignSpec::Interaction),
            "quintiles" => Ok(DesignSpec::Quintiles),
            _ => Err(Error::invalid(format!("unknown design `{s}`"))),
        }
    }
}

/// Outcome, main regressor, design and any further columns that must be
/// present for a row to enter the estimation sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub y: String,
    pub regressor: String,
    pub design: DesignSpec,
    #[serde(default)]
    pub require: Vec<String>,
}

impl Model {
    pub fn new(y: &str, design: DesignSpec) -> Self {
        Model { y: y.to_string(), regressor: "ai_share_lag1".into(), design, require: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    /// Indices into the input rows forming the estimation sample.
    pub rows: Vec<usize>,
    pub y: Vec<f64>,
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
    /// Upper bounds of quintiles 1 to 4, for the quintile design.
    pub quintile_bounds: Option<[f64; 4]>,
}

/// `Q_j = sorted[ceil(j n / 5) - 1]` for `j = 1..4`. A value belongs to the
/// first quintile whose upper bound it does not exceed.
pub fn quintile_bounds(values: &[f64]) -> Result<[f64; 4]> {
    if values.is_empty() {
        return Err(Error::invalid("quintiles of an empty sample"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok([1, 2, 3, 4].map(|j| v[(j * n).div_ceil(5) - 1]))
}

pub fn quintile_of(x: f64, bounds: &[f64; 4]) -> usize {
    bounds.iter().position(|b| x <= *b).map_or(5, |i| i + 1)
}

/// Builds the design on the listwise-complete rows.
pub fn build_design(rows: &[PanelRow], model: &Model) -> Result<Design> {
    let mut needed = vec![model.y.as_str(), model.regressor.as_str()];
    needed.extend(model.require.iter().map(String::as_str));
    let keep: Vec<usize> = (0..rows.len())
        .filter(|&i| rows[i].quarter.is_some() && needed.iter().all(|c| rows[i].get(c).is_some_and(f64::is_finite)))
        .collect();
    if keep.is_empty() {
        let absent = needed
            .iter()
            .find(|c| rows.iter().all(|r| r.get(c).is_none()))
            .map_or_else(|| "no row has every required column".to_string(), |c| format!("`{c}` is missing in every row"));
        return Err(Error::invalid(format!("empty estimation sample: {absent}")));
    }
    let y: Vec<f64> = keep.iter().map(|&i| rows[i].get(&model.y).unwrap()).collect();
    let x: Vec<f64> = keep.iter().map(|&i| rows[i].get(&model.regressor).unwrap()).collect();
    let r = &model.regressor;
    let (names, columns, bounds) = match model.design {
        DesignSpec::Baseline => (vec![r.clone()], vec![x], None),
        DesignSpec::Interaction => {
            let high: Vec<f64> = keep
                .iter()
                .map(|&i| f64::from(u8::from(rows[i].experience_years >= HIGH_EXPERIENCE_YEARS)))
                .collect();
            let product = x.iter().zip(&high).map(|(a, b)| a * b).collect();
            (
                vec![r.clone(), "high_exp".into(), format!("{r}_x_high_exp")],
                vec![x, high, product],
                None,
            )
        }
        DesignSpec::Quintiles => {
            let b = quintile_bounds(&x)?;
            let bins: Vec<usize> = x.iter().map(|v| quintile_of(*v, &b)).collect();
            let names = (2..=5).map(|j| format!("{r}_q{j}")).collect();
            let cols = (2..=5)
                .map(|j| bins.iter().map(|b| f64::from(u8::from(*b == j))).collect())
                .collect();
            (names, cols, Some(b))
        }
    };
    Ok(Design { rows: keep, y, names, columns, quintile_bounds: bounds })
}

/// Two-way FE fit (user and quarter effects, clustered by user).
pub fn fit_panel(rows: &[PanelRow], model: &Model) -> Result<(FEFit, Design)> {
    let d = build_design(rows, model)?;
    let data = FeData {
        users: d.rows.iter().map(|&i| rows[i].user_id.clone()).collect(),
        periods: d.rows.iter().map(|&i| rows[i].quarter.map_or(0, |q| q.index())).collect(),
        y: d.y.clone(),
        x: d.columns.clone(),
        names: d.names.clone(),
    };
    Ok((twoway_fe_ols(&data)?, d))
}

/// Rows dated strictly before the first quarter of `cutoff_year`. The
/// second value is a warning when nothing is left.
pub fn placebo_filter(rows: &[PanelRow], cutoff_year: i32) -> (Vec<PanelRow>, Option<String>) {
    let cutoff = Quarter::new(cutoff_year, 1).map(|q| q.index()).unwrap_or(i64::MIN);
    let kept: Vec<PanelRow> = rows
        .iter()
        .filter(|r| r.quarter.is_some_and(|q| q.index() < cutoff))
        .cloned()
        .collect();
    let warning = kept
        .is_empty()
        .then(|| format!("placebo subset before {cutoff_year}Q1 is empty"));
    (kept, warning)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn row(user: usize, q: i64, x: Option<f64>, y: f64, exp: i32) -> PanelRow {
        let mut r = PanelRow {
            user_id: format!("u{user:03}"),
            quarter: Some(Quarter::new(2020, 1).unwrap().offset(q)),
            ai_share_lag1: x,
            experience_years: exp,
            ..Default::default()
        };
        r.extra.insert("y".into(), y);
        r
    }

    #[test]
    fn five_values_five_bins() {
        let v: Vec<f64> = (0..25).map(|i| (i % 5) as f64 * 0.1).collect();
        let b = quintile_bounds(&v).unwrap();
        let bins: Vec<usize> = (0..5).map(|i| quintile_of(i as f64 * 0.1, &b)).collect();
        assert_eq!(bins, vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn ties_go_low() {
        let b = quintile_bounds(&[0.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(b, [0.0, 0.0, 0.0, 0.0]);
        assert_eq!(quintile_of(0.0, &b), 1);
        assert_eq!(quintile_of(1.0, &b), 5);
    }

    #[test]
    fn listwise_and_all_missing() {
        let rows = vec![row(1, 0, None, 1.0, 0), row(1, 1, Some(0.2), 2.0, 0)];
        let m = Model { y: "y".into(), ..Model::new("y", DesignSpec::Baseline) };
        let d = build_design(&rows, &m).unwrap();
        assert_eq!(d.rows, vec![1]);
        let none = vec![row(1, 0, None, 1.0, 0)];
        let err = build_design(&none, &m).unwrap_err().to_string();
        assert!(err.contains("ai_share_lag1"), "{err}");
    }

    #[test]
    fn everyone_experienced_is_collinear() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<PanelRow> = (0..30)
            .map(|i| row(i / 5, (i % 5) as i64, Some(rng.sample::<f64, _>(StandardNormal)), rng.sample::<f64, _>(StandardNormal), 7))
            .collect();
        let m = Model::new("y", DesignSpec::Interaction);
        match fit_panel(&rows, &m) {
            Err(Error::CollinearWithFixedEffects(name)) | Err(Error::InvalidInput(name)) => {
                assert!(name.contains("high_exp"), "{name}")
            }
            Err(Error::Singular(names)) => assert!(names.iter().any(|n| n.contains("high_exp"))),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn placebo_boundary() {
        let a = row(1, 7, Some(0.1), 0.0, 0); // 2021Q4
        let b = row(1, 8, Some(0.1), 0.0, 0); // 2022Q1
        let (kept, warn) = placebo_filter(&[a.clone(), b.clone()], 2022);
        assert_eq!(kept, vec![a]);
        assert!(warn.is_none());
        let (kept, warn) = placebo_filter(&[b], 2022);
        assert!(kept.is_empty() && warn.is_some());
    }

    #[test]
    fn null_effect_rarely_significant() {
        // y independent of x: the clustered test should reject about 5% of the time.
        let mut rejections = 0;
        for rep in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + rep);
            let mut rows = Vec::new();
            for u in 0..60 {
                let alpha = rng.sample::<f64, _>(StandardNormal);
                for q in 0..6 {
                    let x = 0.3 + 0.1 * rng.sample::<f64, _>(StandardNormal);
                    rows.push(row(u, q, Some(x), alpha + 0.1 * q as f64 + rng.sample::<f64, _>(StandardNormal), 0));
                }
            }
            let (fit, _) = fit_panel(&rows, &Model::new("y", DesignSpec::Baseline)).unwrap();
            if fit.terms[0].p_value < 0.05 {
                rejections += 1;
            }
        }
        assert!(rejections <= 10, "{rejections} rejections");
    }

    proptest! {
        #[test]
        fn quintile_dummies_partition(xs in proptest::collection::vec(0.0f64..1.0, 5..80)) {
            let rows: Vec<PanelRow> = xs.iter().enumerate().map(|(i, x)| row(i, 0, Some(*x), 0.0, 0)).collect();
            let d = build_design(&rows, &Model::new("y", DesignSpec::Quintiles)).unwrap();
            let b = d.quintile_bounds.unwrap();
            for (i, x) in xs.iter().enumerate() {
                let s: f64 = d.columns.iter().map(|c| c[i]).sum();
                let first = f64::from(u8::from(quintile_of(*x, &b) == 1));
                prop_assert_eq!(s, 1.0 - first);
            }
        }
    }
}
