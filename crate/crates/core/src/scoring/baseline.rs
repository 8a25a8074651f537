// SPDX-License-Identifier: Apache-2.0

//! Logistic-regression baseline over verbosity features.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::codemetrics::{verbosity_features, CorpusStats, VerbosityFeatures};
use crate::stats::{mean, pop_sd};
use crate::{Error, Result};

pub const N_FEATURES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
    pub seed: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper { learning_rate: 0.5, epochs: 500, l2: 1e-4, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineModel {
    /// Intercept first, then one weight per standardized feature.
    pub weights: Vec<f64>,
    pub feature_standardization: Standardization,
    pub training_seed: u64,
    /// Corpus moments used for the composite verbosity scores when scoring
    /// raw code; absent for models trained on precomputed features only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus: Option<CorpusStats>,
    /// Training loss after each epoch.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub loss_trace: Vec<f64>,
}

pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl BaselineModel {
    /// A model with every weight zero; scores 0.5 everywhere.
    pub fn zero() -> Self {
        BaselineModel {
            weights: vec![0.0; N_FEATURES + 1],
            feature_standardization: Standardization {
                mean: vec![0.0; N_FEATURES],
                sd: vec![1.0; N_FEATURES],
            },
            training_seed: 0,
            corpus: None,
            loss_trace: Vec::new(),
        }
    }

    pub fn predict(&self, f: &VerbosityFeatures) -> f64 {
        let x = f.as_vec();
        let st = &self.feature_standardization;
        let z = self.weights[0]
            + x.iter()
                .enumerate()
                .map(|(j, v)| self.weights[j + 1] * (v - st.mean[j]) / st.sd[j])
                .sum::<f64>();
        logistic(z)
    }

    pub fn score_code(&self, code: &str) -> Result<f64> {
        let corpus = self
            .corpus
            .as_ref()
            .ok_or_else(|| Error::Scorer("model carries no corpus statistics".into()))?;
        Ok(self.predict(&verbosity_features(code, corpus)?))
    }
}

/// Mean L2-penalised cross-entropy of a logistic model and its gradient.
/// `x` rows exclude the intercept column; the intercept is not penalised.
pub(crate) fn loss_and_grad(x: &[Vec<f64>], y: &[f64], w: &[f64], l2: f64) -> (f64, Vec<f64>) {
    let n = x.len() as f64;
    let mut grad = vec![0.0; w.len()];
    let mut loss = 0.0;
    for (row, &t) in x.iter().zip(y) {
        let z = w[0] + row.iter().zip(&w[1..]).map(|(a, b)| a * b).sum::<f64>();
        // log(1 + e^z) - t z, computed stably
        loss += z.max(0.0) + (-z.abs()).exp().ln_1p() - t * z;
        let r = logistic(z) - t;
        grad[0] += r;
        for (g, v) in grad[1..].iter_mut().zip(row) {
            *g += r * v;
        }
    }
    loss /= n;
    for g in &mut grad {
        *g /= n;
    }
    for j in 1..w.len() {
        loss += 0.5 * l2 * w[j] * w[j];
        grad[j] += l2 * w[j];
    }
    (loss, grad)
}

/// Full-batch gradient descent. A step that would raise the loss is halved
/// until it does not, so the recorded loss never increases.
pub(crate) fn fit_logistic(
    x: &[Vec<f64>],
    y: &[f64],
    hyper: &TrainHyper,
) -> (Vec<f64>, Vec<f64>) {
    let p = x.first().map_or(0, Vec::len) + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let init = Normal::new(0.0, 0.01).unwrap();
    let mut w: Vec<f64> = (0..p).map(|_| init.sample(&mut rng)).collect();
    let (mut loss, mut grad) = loss_and_grad(x, y, &w, hyper.l2);
    let mut trace = Vec::with_capacity(hyper.epochs);
    let mut step = hyper.learning_rate;
    for _ in 0..hyper.epochs {
        let mut accepted = false;
        for _ in 0..60 {
            let cand: Vec<f64> = w.iter().zip(&grad).map(|(a, g)| a - step * g).collect();
            let (l, g) = loss_and_grad(x, y, &cand, hyper.l2);
            if l <= loss {
                w = cand;
                loss = l;
                grad = g;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        trace.push(loss);
        if !accepted {
            break;
        }
    }
    (w, trace)
}

pub fn train_baseline(
    labeled: &[(VerbosityFeatures, bool)],
    hyper: &TrainHyper,
) -> Result<BaselineModel> {
    let pos = labeled.iter().filter(|(_, l)| *l).count();
    if pos == 0 || pos == labeled.len() {
        return Err(Error::DegenerateLabels);
    }
    let raw: Vec<Vec<f64>> = labeled.iter().map(|(f, _)| f.as_vec()).collect();
    if raw.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite feature value"));
    }
    let mut st = Standardization { mean: Vec::new(), sd: Vec::new() };
    for j in 0..N_FEATURES {
        let col: Vec<f64> = raw.iter().map(|r| r[j]).collect();
        let sd = pop_sd(&col);
        st.mean.push(mean(&col));
        // A constant feature standardizes to zero and carries no weight.
        st.sd.push(if sd > 0.0 { sd } else { 1.0 });
    }
    let x: Vec<Vec<f64>> = raw
        .iter()
        .map(|r| (0..N_FEATURES).map(|j| (r[j] - st.mean[j]) / st.sd[j]).collect())
        .collect();
    let y: Vec<f64> = labeled.iter().map(|(_, l)| f64::from(u8::from(*l))).collect();
    let (weights, loss_trace) = fit_logistic(&x, &y, hyper);
    Ok(BaselineModel {
        weights,
        feature_standardization: st,
        training_seed: hyper.seed,
        corpus: None,
        loss_trace,
    })
}
