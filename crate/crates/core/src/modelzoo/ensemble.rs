//! Tree ensembles: bagged random forests and gradient boosting.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{grow, RegressionTree, SplitMode, TreeParams};
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<RegressionTree>,
}

impl Forest {
    pub fn predict(&self, row: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(row)).sum::<f64>() / self.trees.len() as f64
    }
}

pub struct ForestParams {
    pub n_trees: usize,
    pub tree: TreeParams,
    pub bootstrap: bool,
}

/// Trees are grown in parallel; each draws from its own seed stream, so the
/// forest is identical to a sequential build.
pub fn fit_forest(x: &[Vec<f64>], y: &[f64], params: &ForestParams, seed: u64) -> Forest {
    let n = y.len();
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, t as u64));
            let rows: Vec<usize> = if params.bootstrap {
                (0..n).map(|_| rng.gen_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            grow(x, y, rows, &params.tree, &mut rng)
        })
        .collect();
    Forest { trees }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedTrees {
    pub initial: f64,
    pub learning_rate: f64,
    pub trees: Vec<RegressionTree>,
    /// Training RMSE before the first round and after every round.
    pub training_rmse: Vec<f64>,
}

impl BoostedTrees {
    pub fn predict(&self, row: &[f64]) -> f64 {
        self.initial
            + self
                .trees
                .iter()
                .map(|t| self.learning_rate * t.predict(row))
                .sum::<f64>()
    }
}

pub struct BoostingParams {
    pub n_trees: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_leaf: usize,
}

/// Squared-loss boosting: every round fits a tree to the current residuals
/// and adds it with shrinkage.
pub fn fit_boosting(x: &[Vec<f64>], y: &[f64], params: &BoostingParams, seed: u64) -> BoostedTrees {
    let n = y.len();
    let initial = y.iter().sum::<f64>() / n as f64;
    let mut fitted = vec![initial; n];
    let rmse = |fitted: &[f64]| {
        (y.iter()
            .zip(fitted)
            .map(|(t, f)| (t - f).powi(2))
            .sum::<f64>()
            / n as f64)
            .sqrt()
    };
    let mut training_rmse = vec![rmse(&fitted)];
    let tree_params = TreeParams {
        max_depth: params.max_depth,
        min_leaf: params.min_leaf,
        feature_fraction: 1.0,
        split_mode: SplitMode::Best,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trees = Vec::with_capacity(params.n_trees);
    for _ in 0..params.n_trees {
        let residuals: Vec<f64> = y.iter().zip(&fitted).map(|(t, f)| t - f).collect();
        let tree = grow(x, &residuals, (0..n).collect(), &tree_params, &mut rng);
        for (f, row) in fitted.iter_mut().zip(x) {
            *f += params.learning_rate * tree.predict(row);
        }
        training_rmse.push(rmse(&fitted));
        trees.push(tree);
    }
    BoostedTrees {
        initial,
        learning_rate: params.learning_rate,
        trees,
        training_rmse,
    }
}
