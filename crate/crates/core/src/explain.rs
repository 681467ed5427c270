//! Exact interventional Shapley values.
//!
//! The value of a coalition `S` for observation `x` is the mean prediction
//! over background rows `b` of the hybrid row that takes `x` on `S` and `b`
//! elsewhere. All `2^M` coalitions are enumerated, so the attributions are
//! exact; `M` is capped at [`MAX_EXACT_FEATURES`].

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, DatasetError};
use crate::modelzoo::TrainedModel;

pub const MAX_EXACT_FEATURES: usize = 12;

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("background dataset is empty")]
    EmptyBackground,
    #[error("exact enumeration infeasible: {features} features exceeds the cap of {cap}")]
    TooManyFeatures { features: usize, cap: usize },
    #[error("row has {found} values, model expects {expected}")]
    FeatureCount { expected: usize, found: usize },
    #[error("explanation set has no records")]
    NoRecords,
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Anything that maps a feature row to a prediction.
pub trait Predictor: Sync {
    fn n_features(&self) -> usize;
    fn predict_row(&self, row: &[f64]) -> f64;
}

impl Predictor for TrainedModel {
    fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    fn predict_row(&self, row: &[f64]) -> f64 {
        TrainedModel::predict_row(self, row)
    }
}

/// Adapts a closure into a [`Predictor`].
pub struct FnPredictor<F> {
    pub n_features: usize,
    pub f: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> Predictor for FnPredictor<F> {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn predict_row(&self, row: &[f64]) -> f64 {
        (self.f)(row)
    }
}

/// Mean prediction over the background rows.
pub fn base_value(model: &dyn Predictor, background: &[Vec<f64>]) -> Result<f64, ExplainError> {
    if background.is_empty() {
        return Err(ExplainError::EmptyBackground);
    }
    Ok(background.iter().map(|b| model.predict_row(b)).sum::<f64>() / background.len() as f64)
}

/// Shapley weight `|S|!(M-|S|-1)!/M!` indexed by coalition size.
fn coalition_weights(m: usize) -> Vec<f64> {
    // 1 / (M · C(M-1, s))
    let mut weights = Vec::with_capacity(m);
    let mut binom = 1.0f64;
    for s in 0..m {
        weights.push(1.0 / (m as f64 * binom));
        binom = binom * (m - 1 - s) as f64 / (s + 1) as f64;
    }
    weights
}

/// Coalition values `v(S)` for every bitmask `S` over the features.
fn coalition_values(model: &dyn Predictor, background: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    let m = x.len();
    let n_masks = 1usize << m;
    let mut values = vec![0.0; n_masks];
    let mut hybrid = vec![0.0; m];
    for b in background {
        for (mask, v) in values.iter_mut().enumerate() {
            for j in 0..m {
                hybrid[j] = if mask >> j & 1 == 1 { x[j] } else { b[j] };
            }
            *v += model.predict_row(&hybrid);
        }
    }
    let n = background.len() as f64;
    values.iter_mut().for_each(|v| *v /= n);
    values
}

/// Exact Shapley values of `x`, one per feature.
pub fn shapley_values(
    model: &dyn Predictor,
    background: &[Vec<f64>],
    x: &[f64],
) -> Result<Vec<f64>, ExplainError> {
    let m = model.n_features();
    if x.len() != m {
        return Err(ExplainError::FeatureCount {
            expected: m,
            found: x.len(),
        });
    }
    if m > MAX_EXACT_FEATURES {
        return Err(ExplainError::TooManyFeatures {
            features: m,
            cap: MAX_EXACT_FEATURES,
        });
    }
    if background.is_empty() {
        return Err(ExplainError::EmptyBackground);
    }
    if let Some(b) = background.iter().find(|b| b.len() != m) {
        return Err(ExplainError::FeatureCount {
            expected: m,
            found: b.len(),
        });
    }
    let values = coalition_values(model, background, x);
    let weights = coalition_weights(m);
    let phi = (0..m)
        .map(|i| {
            let bit = 1usize << i;
            (0..values.len())
                .filter(|mask| mask & bit == 0)
                .map(|mask| {
                    weights[mask.count_ones() as usize] * (values[mask | bit] - values[mask])
                })
                .sum()
        })
        .collect();
    Ok(phi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationRecord {
    pub observation_index: usize,
    pub feature: String,
    pub feature_value: f64,
    pub shap_value: f64,
    /// `shap_value + base_value`: the effect translated into target units.
    pub expected_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationSet {
    pub model_id: String,
    pub base_value: f64,
    pub feature_names: Vec<String>,
    /// Observation-major, features in `feature_names` order.
    pub records: Vec<ExplanationRecord>,
}

impl ExplanationSet {
    pub fn n_observations(&self) -> usize {
        self.records.len() / self.feature_names.len().max(1)
    }

    pub fn records_for<'a>(
        &'a self,
        feature: &'a str,
    ) -> impl Iterator<Item = &'a ExplanationRecord> {
        self.records.iter().filter(move |r| r.feature == feature)
    }
}

/// Explains every row of `data_of_interest` against `background` (normally
/// the model's training data). Rows are processed in parallel; results do
/// not depend on scheduling.
pub fn explain_dataset(
    model: &TrainedModel,
    model_id: &str,
    background: &Dataset,
    data_of_interest: &Dataset,
) -> Result<ExplanationSet, ExplainError> {
    let m = model.feature_names.len();
    if m > MAX_EXACT_FEATURES {
        return Err(ExplainError::TooManyFeatures {
            features: m,
            cap: MAX_EXACT_FEATURES,
        });
    }
    let bg = background.matrix_for(&model.feature_names)?;
    let base = base_value(model, &bg)?;
    let rows = data_of_interest.matrix_for(&model.feature_names)?;
    let phis = rows
        .par_iter()
        .map(|x| shapley_values(model, &bg, x))
        .collect::<Result<Vec<_>, _>>()?;
    let records =
        rows.iter()
            .zip(phis)
            .enumerate()
            .flat_map(|(obs, (x, phi))| {
                model.feature_names.iter().zip(x.iter().zip(phi)).map(
                    move |(name, (&value, shap))| ExplanationRecord {
                        observation_index: obs,
                        feature: name.clone(),
                        feature_value: value,
                        shap_value: shap,
                        expected_value: shap + base,
                    },
                )
            })
            .collect();
    Ok(ExplanationSet {
        model_id: model_id.to_owned(),
        base_value: base,
        feature_names: model.feature_names.clone(),
        records,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceVector {
    pub model_id: String,
    pub weights: BTreeMap<String, f64>,
}

/// Mean absolute Shapley value per feature, normalized to sum to one.
/// Uniform when every attribution is zero.
pub fn feature_importance(expl: &ExplanationSet) -> Result<ImportanceVector, ExplainError> {
    if expl.records.is_empty() {
        return Err(ExplainError::NoRecords);
    }
    let mut totals: BTreeMap<&str, (f64, usize)> = expl
        .feature_names
        .iter()
        .map(|f| (f.as_str(), (0.0, 0)))
        .collect();
    for r in &expl.records {
        let e = totals.entry(r.feature.as_str()).or_insert((0.0, 0));
        e.0 += r.shap_value.abs();
        e.1 += 1;
    }
    let means: Vec<(&str, f64)> = totals
        .iter()
        .map(|(f, (s, n))| (*f, if *n == 0 { 0.0 } else { s / *n as f64 }))
        .collect();
    let total: f64 = means.iter().map(|(_, v)| v).sum();
    let weights = means
        .iter()
        .map(|&(f, v)| {
            let w = if total > 0.0 {
                v / total
            } else {
                1.0 / means.len() as f64
            };
            (f.to_owned(), w)
        })
        .collect();
    Ok(ImportanceVector {
        model_id: expl.model_id.clone(),
        weights,
    })
}
