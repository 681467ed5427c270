//! Trainable regression families: ridge-penalized linear model (GLM),
//! regression tree, random forest (with an extra-trees variant) and
//! gradient-boosted trees. All use squared loss.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, Observation};

pub mod ensemble;
pub mod linear;
pub mod tree;

pub use ensemble::{BoostedTrees, Forest};
pub use linear::LinearModel;
pub use tree::{RegressionTree, SplitMode};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),
    #[error("training set needs at least 2 labeled rows, found {0}")]
    TooFewRows(usize),
    #[error("singular linear system; use an l2 penalty > 0")]
    SingularSystem,
    #[error("observation is missing feature `{0}`")]
    MissingFeature(String),
    #[error("expected {expected} feature values, got {found}")]
    FeatureCount { expected: usize, found: usize },
}

/// Model family. Variant order is the lexicographic order of the names,
/// which the leaderboard uses for tie-breaking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "DRF")]
    Drf,
    #[serde(rename = "GBM")]
    Gbm,
    #[serde(rename = "GLM")]
    Glm,
    #[serde(rename = "TREE")]
    Tree,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Drf => "DRF",
            Family::Gbm => "GBM",
            Family::Glm => "GLM",
            Family::Tree => "TREE",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family")]
pub enum ModelSpec {
    #[serde(rename = "GLM")]
    Glm { l2_penalty: f64 },
    #[serde(rename = "TREE")]
    Tree { max_depth: usize, min_leaf: usize },
    /// Bagged trees with per-split feature subsampling. With
    /// `randomized_splits` thresholds are drawn instead of optimized (XRT).
    #[serde(rename = "DRF")]
    Drf {
        n_trees: usize,
        max_depth: usize,
        min_leaf: usize,
        feature_subsample_fraction: f64,
        bootstrap: bool,
        randomized_splits: bool,
    },
    #[serde(rename = "GBM")]
    Gbm {
        n_trees: usize,
        learning_rate: f64,
        max_depth: usize,
        min_leaf: usize,
    },
}

impl ModelSpec {
    pub fn family(&self) -> Family {
        match self {
            ModelSpec::Glm { .. } => Family::Glm,
            ModelSpec::Tree { .. } => Family::Tree,
            ModelSpec::Drf { .. } => Family::Drf,
            ModelSpec::Gbm { .. } => Family::Gbm,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidHyperparameter(msg));
        match *self {
            ModelSpec::Glm { l2_penalty } => {
                if !(l2_penalty.is_finite() && l2_penalty >= 0.0) {
                    return bad(format!("l2_penalty must be >= 0, got {l2_penalty}"));
                }
            }
            ModelSpec::Tree { min_leaf, .. } => {
                if min_leaf == 0 {
                    return bad("min_leaf must be >= 1".into());
                }
            }
            ModelSpec::Drf {
                n_trees,
                min_leaf,
                feature_subsample_fraction,
                ..
            } => {
                if n_trees == 0 {
                    return bad("n_trees must be >= 1".into());
                }
                if min_leaf == 0 {
                    return bad("min_leaf must be >= 1".into());
                }
                if !(feature_subsample_fraction > 0.0 && feature_subsample_fraction <= 1.0) {
                    return bad(format!(
                        "feature_subsample_fraction must be in (0, 1], got {feature_subsample_fraction}"
                    ));
                }
            }
            ModelSpec::Gbm {
                n_trees,
                learning_rate,
                min_leaf,
                ..
            } => {
                if n_trees == 0 {
                    return bad("n_trees must be >= 1".into());
                }
                if min_leaf == 0 {
                    return bad("min_leaf must be >= 1".into());
                }
                if !(0.0..=1.0).contains(&learning_rate) {
                    return bad(format!(
                        "learning_rate must be in [0, 1], got {learning_rate}"
                    ));
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelSpec::Glm { l2_penalty } => write!(f, "GLM(l2={l2_penalty})"),
            ModelSpec::Tree { max_depth, min_leaf } => {
                write!(f, "TREE(depth={max_depth}, min_leaf={min_leaf})")
            }
            ModelSpec::Drf {
                n_trees,
                max_depth,
                min_leaf,
                feature_subsample_fraction,
                bootstrap,
                randomized_splits,
            } => write!(
                f,
                "{}(trees={n_trees}, depth={max_depth}, min_leaf={min_leaf}, mtries={feature_subsample_fraction}, bootstrap={bootstrap})",
                if *randomized_splits { "XRT" } else { "DRF" }
            ),
            ModelSpec::Gbm {
                n_trees,
                learning_rate,
                max_depth,
                min_leaf,
            } => write!(
                f,
                "GBM(trees={n_trees}, lr={learning_rate}, depth={max_depth}, min_leaf={min_leaf})"
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedModel {
    Linear(LinearModel),
    Tree(RegressionTree),
    Forest(Forest),
    Boosted(BoostedTrees),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    pub feature_names: Vec<String>,
    pub fitted: FittedModel,
}

impl TrainedModel {
    /// A linear model with given parameters, bypassing training.
    pub fn linear(feature_names: Vec<String>, coefficients: Vec<f64>, intercept: f64) -> Self {
        assert_eq!(feature_names.len(), coefficients.len());
        Self {
            spec: ModelSpec::Glm { l2_penalty: 0.0 },
            feature_names,
            fitted: FittedModel::Linear(LinearModel {
                coefficients,
                intercept,
            }),
        }
    }

    /// Prediction for a row laid out in `feature_names` order.
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        debug_assert_eq!(row.len(), self.feature_names.len());
        match &self.fitted {
            FittedModel::Linear(m) => m.predict(row),
            FittedModel::Tree(t) => t.predict(row),
            FittedModel::Forest(f) => f.predict(row),
            FittedModel::Boosted(b) => b.predict(row),
        }
    }

    /// Prediction for an observation whose values follow `names`.
    pub fn predict(&self, names: &[String], obs: &Observation) -> Result<f64, ModelError> {
        if names.len() != obs.values.len() {
            return Err(ModelError::FeatureCount {
                expected: names.len(),
                found: obs.values.len(),
            });
        }
        let row = self
            .feature_names
            .iter()
            .map(|f| {
                names
                    .iter()
                    .position(|n| n == f)
                    .map(|j| obs.values[j])
                    .ok_or_else(|| ModelError::MissingFeature(f.clone()))
            })
            .collect::<Result<Vec<f64>, _>>()?;
        Ok(self.predict_row(&row))
    }

    pub fn predict_dataset(&self, ds: &Dataset) -> Result<Vec<f64>, ModelError> {
        let rows = ds.matrix_for(&self.feature_names).map_err(|e| match e {
            crate::dataset::DatasetError::UnknownFeature(f) => ModelError::MissingFeature(f),
            other => ModelError::MissingFeature(other.to_string()),
        })?;
        Ok(rows.iter().map(|r| self.predict_row(r)).collect())
    }
}

/// Trains `spec` on the labeled rows of `train`, in row order. Deterministic
/// for a fixed `(spec, train, seed)`.
pub fn fit(spec: &ModelSpec, train: &Dataset, seed: u64) -> Result<TrainedModel, ModelError> {
    spec.validate()?;
    let (x, y) = train.labeled_xy();
    if y.len() < 2 {
        return Err(ModelError::TooFewRows(y.len()));
    }
    let fitted = match *spec {
        ModelSpec::Glm { l2_penalty } => {
            FittedModel::Linear(linear::fit_ridge(&x, &y, l2_penalty)?)
        }
        ModelSpec::Tree {
            max_depth,
            min_leaf,
        } => {
            let params = tree::TreeParams {
                max_depth,
                min_leaf,
                feature_fraction: 1.0,
                split_mode: SplitMode::Best,
            };
            let mut rng = rand::SeedableRng::seed_from_u64(seed);
            FittedModel::Tree(tree::grow(
                &x,
                &y,
                (0..y.len()).collect(),
                &params,
                &mut rng,
            ))
        }
        ModelSpec::Drf {
            n_trees,
            max_depth,
            min_leaf,
            feature_subsample_fraction,
            bootstrap,
            randomized_splits,
        } => FittedModel::Forest(ensemble::fit_forest(
            &x,
            &y,
            &ensemble::ForestParams {
                n_trees,
                bootstrap,
                tree: tree::TreeParams {
                    max_depth,
                    min_leaf,
                    feature_fraction: feature_subsample_fraction,
                    split_mode: if randomized_splits {
                        SplitMode::Random
                    } else {
                        SplitMode::Best
                    },
                },
            },
            seed,
        )),
        ModelSpec::Gbm {
            n_trees,
            learning_rate,
            max_depth,
            min_leaf,
        } => FittedModel::Boosted(ensemble::fit_boosting(
            &x,
            &y,
            &ensemble::BoostingParams {
                n_trees,
                learning_rate,
                max_depth,
                min_leaf,
            },
            seed,
        )),
    };
    Ok(TrainedModel {
        spec: spec.clone(),
        feature_names: train.feature_names().to_vec(),
        fitted,
    })
}
