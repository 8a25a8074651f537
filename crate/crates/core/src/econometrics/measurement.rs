// SPDX-License-Identifier: Apache-2.0

//! Function-window moving averages of AI use and the attenuation
//! extrapolation built on them.

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use crate::quarter::Quarter;
use crate::{Error, Result};

/// Longest stretch of time a window or an interpolation may bridge.
pub const MAX_SPAN_DAYS: i64 = 184;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaPoint {
    pub time: DateTime<Utc>,
    pub ai_k: f64,
    pub k: usize,
    pub span_days: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovingAverageSeries {
    pub user_id: String,
    pub points: Vec<MaPoint>,
}

/// Centered moving average over `k` consecutive functions: `k/2` (rounded
/// down) before the anchor, `ceil(k/2) - 1` after it. The point takes the
/// anchor's time. Windows stretching over more than [`MAX_SPAN_DAYS`] are
/// dropped. `values` must be time-ordered.
pub fn moving_average_ai(
    user_id: &str,
    values: &[(DateTime<Utc>, f64)],
    k: usize,
) -> Result<MovingAverageSeries> {
    if k == 0 {
        return Err(Error::invalid("moving-average window must be positive"));
    }
    let back = k / 2;
    let fwd = k.div_ceil(2) - 1;
    let mut points = Vec::new();
    if values.len() >= k {
        let limit = Duration::days(MAX_SPAN_DAYS);
        let mut window: f64 = values[..k].iter().map(|v| v.1).sum();
        for anchor in back..values.len() - fwd {
            let lo = anchor - back;
            let hi = anchor + fwd;
            if lo > 0 {
                window += values[hi].1 - values[lo - 1].1;
            }
            let span = values[hi].0 - values[lo].0;
            if span > limit {
                continue;
            }
            points.push(MaPoint {
                time: values[anchor].0,
                ai_k: window / k as f64,
                k,
                span_days: span.num_days(),
            });
        }
    }
    Ok(MovingAverageSeries { user_id: user_id.to_string(), points })
}

/// Value of `series` at each quarter's midpoint: linear interpolation
/// between the nearest points on either side, or the nearest point when all
/// points lie on one side. Gaps wider than [`MAX_SPAN_DAYS`] give `None`.
pub fn interpolate_to_quarter(series: &MovingAverageSeries, quarters: &[Quarter]) -> Vec<Option<f64>> {
    let pts = &series.points;
    let limit = Duration::days(MAX_SPAN_DAYS);
    quarters
        .iter()
        .map(|q| {
            if pts.is_empty() {
                return None;
            }
            let m = q.midpoint();
            let after = pts.partition_point(|p| p.time < m);
            let right = pts.get(after);
            let left = after.checked_sub(1).map(|i| &pts[i]);
            match (left, right) {
                (_, Some(r)) if r.time == m => Some(r.ai_k),
                (Some(l), Some(r)) => {
                    if r.time - l.time > limit {
                        return None;
                    }
                    let w = (m - l.time).num_milliseconds() as f64
                        / (r.time - l.time).num_milliseconds() as f64;
                    Some(l.ai_k + w * (r.ai_k - l.ai_k))
                }
                (Some(p), None) | (None, Some(p)) => {
                    ((p.time - m).abs() <= limit).then_some(p.ai_k)
                }
                (None, None) => None,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttenuationInput {
    pub k_values: Vec<usize>,
    pub b_hat_by_k: Vec<f64>,
    /// Standard errors for weighting; non-positive or missing entries give
    /// equal weights.
    #[serde(default)]
    pub se_by_k: Vec<f64>,
    /// Variance of the true per-function AI signal.
    #[serde(default)]
    pub sigma_ai_sq: Option<f64>,
    /// Variance of the per-function measurement noise.
    #[serde(default)]
    pub sigma_eta_sq: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attenuation {
    /// Intercept of the fit at `1/k -> 0`.
    pub beta_extrapolated: f64,
    pub slope_on_inv_k: f64,
    /// `1 - (s_eta/k) / (s_ai + s_eta/k)` per k, when both variances given.
    pub predicted_factors: Option<Vec<f64>>,
}

pub fn attenuation_factor(k: usize, sigma_ai_sq: f64, sigma_eta_sq: f64) -> f64 {
    let noise = sigma_eta_sq / k as f64;
    if noise == 0.0 {
        return 1.0;
    }
    1.0 - noise / (sigma_ai_sq + noise)
}

/// Weighted least squares of `b_k` on `1/k` with weights `1/se²`.
pub fn attenuation_extrapolate(input: &AttenuationInput) -> Result<Attenuation> {
    let n = input.k_values.len();
    if n != input.b_hat_by_k.len() {
        return Err(Error::invalid("k values and estimates differ in length"));
    }
    let mut ks = input.k_values.clone();
    ks.sort_unstable();
    ks.dedup();
    if ks.len() != n {
        return Err(Error::invalid("k values must be distinct"));
    }
    if n < 2 || ks[0] == 0 {
        return Err(Error::invalid("at least two positive k values are required"));
    }
    let use_se = input.se_by_k.len() == n && input.se_by_k.iter().all(|s| *s > 0.0 && s.is_finite());
    let w: Vec<f64> = (0..n)
        .map(|i| if use_se { input.se_by_k[i].powi(-2) } else { 1.0 })
        .collect();
    let x: Vec<f64> = input.k_values.iter().map(|&k| 1.0 / k as f64).collect();
    let sw: f64 = w.iter().sum();
    let mx = w.iter().zip(&x).map(|(w, x)| w * x).sum::<f64>() / sw;
    let my = w.iter().zip(&input.b_hat_by_k).map(|(w, y)| w * y).sum::<f64>() / sw;
    let sxy: f64 = (0..n).map(|i| w[i] * (x[i] - mx) * (input.b_hat_by_k[i] - my)).sum();
    let sxx: f64 = (0..n).map(|i| w[i] * (x[i] - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let predicted_factors = match (input.sigma_ai_sq, input.sigma_eta_sq) {
        (Some(s_ai), Some(s_eta)) => Some(
            input
                .k_values
                .iter()
                .map(|&k| attenuation_factor(k, s_ai, s_eta))
                .collect(),
        ),
        _ => None,
    };
    Ok(Attenuation {
        beta_extrapolated: my - slope * mx,
        slope_on_inv_k: slope,
        predicted_factors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn day(d: i64) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2022, 1, 1, 0, 0, 0).unwrap() + Duration::days(d)
    }

    #[test]
    fn identity_window() {
        let v: Vec<_> = (0..5).map(|i| (day(i), i as f64 * 0.1)).collect();
        let s = moving_average_ai("u", &v, 1).unwrap();
        assert_eq!(s.points.iter().map(|p| p.ai_k).collect::<Vec<_>>(), vec![0.0, 0.1, 0.2, 0.30000000000000004, 0.4]);
    }

    #[test]
    fn window_alignment() {
        // k = 4: two back, one forward.
        let v: Vec<_> = (0..6).map(|i| (day(i), i as f64)).collect();
        let s = moving_average_ai("u", &v, 4).unwrap();
        assert_eq!(s.points.len(), 3);
        assert_eq!(s.points[0].time, day(2));
        assert_eq!(s.points[0].ai_k, 1.5);
        assert_eq!(s.points[2].ai_k, 3.5);
        let few = moving_average_ai("u", &v[..3], 4).unwrap();
        assert!(few.points.is_empty());
    }

    #[test]
    fn constant_and_span_rule() {
        let v: Vec<_> = (0..10).map(|i| (day(i * 10), 0.3)).collect();
        let s = moving_average_ai("u", &v, 8).unwrap();
        assert!(s.points.iter().all(|p| (p.ai_k - 0.3).abs() < 1e-15));
        let edge = vec![(day(0), 1.0), (day(184), 1.0)];
        assert_eq!(moving_average_ai("u", &edge, 2).unwrap().points.len(), 1);
        let over = vec![(day(0), 1.0), (day(185), 1.0)];
        assert!(moving_average_ai("u", &over, 2).unwrap().points.is_empty());
    }

    fn series(pts: &[(DateTime<Utc>, f64)]) -> MovingAverageSeries {
        MovingAverageSeries {
            user_id: "u".into(),
            points: pts
                .iter()
                .map(|&(time, ai_k)| MaPoint { time, ai_k, k: 1, span_days: 0 })
                .collect(),
        }
    }

    #[test]
    fn interpolation_rules() {
        let q = Quarter::new(2022, 2).unwrap();
        let m = q.midpoint();
        assert_eq!(interpolate_to_quarter(&series(&[(m, 0.7)]), &[q]), vec![Some(0.7)]);
        let s = series(&[(m - Duration::days(10), 0.4), (m + Duration::days(80), 0.4)]);
        assert_eq!(interpolate_to_quarter(&s, &[q]), vec![Some(0.4)]);
        let s = series(&[(m - Duration::days(10), 0.0), (m + Duration::days(30), 1.0)]);
        assert!((interpolate_to_quarter(&s, &[q])[0].unwrap() - 0.25).abs() < 1e-12);
        let s = series(&[(m - Duration::days(100), 0.0), (m + Duration::days(90), 1.0)]);
        assert_eq!(interpolate_to_quarter(&s, &[q]), vec![None]);
        let s = series(&[(m - Duration::days(40), 0.2), (m - Duration::days(5), 0.6)]);
        assert_eq!(interpolate_to_quarter(&s, &[q]), vec![Some(0.6)]);
        assert_eq!(interpolate_to_quarter(&series(&[]), &[q, q]), vec![None, None]);
    }

    #[test]
    fn extrapolation_cases() {
        let flat = AttenuationInput {
            k_values: vec![4, 8, 16, 32],
            b_hat_by_k: vec![0.1; 4],
            se_by_k: vec![0.01, 0.02, 0.03, 0.04],
            sigma_ai_sq: Some(0.2),
            sigma_eta_sq: Some(0.0),
        };
        let a = attenuation_extrapolate(&flat).unwrap();
        assert!((a.beta_extrapolated - 0.1).abs() < 1e-15);
        assert_eq!(a.predicted_factors.unwrap(), vec![1.0; 4]);

        // b_k = 0.12 - 0.2/k exactly
        let lin = AttenuationInput {
            k_values: vec![4, 8, 16],
            b_hat_by_k: vec![0.07, 0.095, 0.1075],
            se_by_k: vec![],
            sigma_ai_sq: None,
            sigma_eta_sq: None,
        };
        let a = attenuation_extrapolate(&lin).unwrap();
        assert!((a.beta_extrapolated - 0.12).abs() < 1e-12);
        assert!((a.slope_on_inv_k + 0.2).abs() < 1e-12);
        assert_eq!(attenuation_factor(1, 0.5, 0.5), 0.5);

        let dup = AttenuationInput { k_values: vec![4, 4], b_hat_by_k: vec![0.1, 0.2], ..lin };
        assert!(attenuation_extrapolate(&dup).is_err());
    }
}
