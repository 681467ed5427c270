//! Seeded mini-AutoML: grid enumeration, k-fold cross-validated RMSE,
//! leaderboard and per-family selection.
//!
//! Cross-validation RMSE is pooled: a single RMSE over every held-out
//! prediction, not the mean of per-fold RMSEs. Folds are contiguous slices
//! of a seeded shuffle of the content-sorted labeled rows, so scores do not
//! depend on the order rows were supplied in.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::modelzoo::{fit, Family, ModelError, ModelSpec};
use crate::seed::derive_seed;

const FOLD_STREAM: u64 = 0xF01D;

#[derive(Debug, Error)]
pub enum AutomlError {
    #[error("k must be at least 2, got {0}")]
    TooFewFolds(usize),
    #[error("k = {k} exceeds the number of labeled rows ({rows})")]
    TooManyFolds { k: usize, rows: usize },
    #[error("grid has no candidates")]
    EmptyGrid,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    pub model_id: String,
    pub alias: String,
    pub family: Family,
    pub grid_index: usize,
    pub spec: ModelSpec,
    pub cv_rmse: f64,
    pub rank: usize,
}

/// A candidate that could not be scored; kept out of the leaderboard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedCandidate {
    pub model_id: String,
    pub spec: ModelSpec,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutomlReport {
    pub leaderboard: Vec<LeaderboardEntry>,
    pub failures: Vec<FailedCandidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmGrid {
    pub l2_penalty: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeGrid {
    pub max_depth: Vec<usize>,
    pub min_leaf: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrfGrid {
    pub n_trees: Vec<usize>,
    pub max_depth: Vec<usize>,
    pub min_leaf: Vec<usize>,
    pub feature_subsample_fraction: Vec<f64>,
    pub randomized_splits: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbmGrid {
    pub n_trees: Vec<usize>,
    pub learning_rate: Vec<f64>,
    pub max_depth: Vec<usize>,
    pub min_leaf: Vec<usize>,
}

/// Per-family value lists; each family contributes the Cartesian product of
/// its lists (an empty list disables the family).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub glm: GlmGrid,
    pub tree: TreeGrid,
    pub drf: DrfGrid,
    pub gbm: GbmGrid,
    pub k: usize,
    pub seed: u64,
}

impl GridConfig {
    /// An empty grid: no candidates for any family.
    pub fn empty(k: usize, seed: u64) -> Self {
        Self {
            glm: GlmGrid { l2_penalty: vec![] },
            tree: TreeGrid {
                max_depth: vec![],
                min_leaf: vec![],
            },
            drf: DrfGrid {
                n_trees: vec![],
                max_depth: vec![],
                min_leaf: vec![],
                feature_subsample_fraction: vec![],
                randomized_splits: vec![],
            },
            gbm: GbmGrid {
                n_trees: vec![],
                learning_rate: vec![],
                max_depth: vec![],
                min_leaf: vec![],
            },
            k,
            seed,
        }
    }

    /// Desk-scale default: 52 candidates over the four families.
    pub fn default_with(k: usize, seed: u64) -> Self {
        Self {
            glm: GlmGrid {
                l2_penalty: vec![0.0, 1e-3, 1e-2, 1e-1, 1.0],
            },
            tree: TreeGrid {
                max_depth: vec![1, 2, 3, 4, 5, 6],
                min_leaf: vec![2, 5],
            },
            drf: DrfGrid {
                n_trees: vec![50],
                max_depth: vec![6, 12],
                min_leaf: vec![1],
                feature_subsample_fraction: vec![0.5, 1.0],
                randomized_splits: vec![false, true],
            },
            gbm: GbmGrid {
                n_trees: vec![30, 60, 120],
                learning_rate: vec![0.05, 0.1, 0.3],
                max_depth: vec![2, 3, 4],
                min_leaf: vec![2],
            },
            k,
            seed,
        }
    }

    /// Every grid point as `(family, 1-based index within family, spec)`.
    pub fn candidates(&self) -> Vec<(Family, usize, ModelSpec)> {
        let mut out = Vec::new();
        let mut push = |family: Family, specs: Vec<ModelSpec>| {
            out.extend(
                specs
                    .into_iter()
                    .enumerate()
                    .map(|(i, s)| (family, i + 1, s)),
            );
        };
        push(
            Family::Glm,
            self.glm
                .l2_penalty
                .iter()
                .map(|&l2_penalty| ModelSpec::Glm { l2_penalty })
                .collect(),
        );
        let mut trees = Vec::new();
        for &max_depth in &self.tree.max_depth {
            for &min_leaf in &self.tree.min_leaf {
                trees.push(ModelSpec::Tree {
                    max_depth,
                    min_leaf,
                });
            }
        }
        push(Family::Tree, trees);
        let mut forests = Vec::new();
        for &randomized_splits in &self.drf.randomized_splits {
            for &n_trees in &self.drf.n_trees {
                for &max_depth in &self.drf.max_depth {
                    for &min_leaf in &self.drf.min_leaf {
                        for &feature_subsample_fraction in &self.drf.feature_subsample_fraction {
                            forests.push(ModelSpec::Drf {
                                n_trees,
                                max_depth,
                                min_leaf,
                                feature_subsample_fraction,
                                bootstrap: true,
                                randomized_splits,
                            });
                        }
                    }
                }
            }
        }
        push(Family::Drf, forests);
        let mut boosted = Vec::new();
        for &n_trees in &self.gbm.n_trees {
            for &learning_rate in &self.gbm.learning_rate {
                for &max_depth in &self.gbm.max_depth {
                    for &min_leaf in &self.gbm.min_leaf {
                        boosted.push(ModelSpec::Gbm {
                            n_trees,
                            learning_rate,
                            max_depth,
                            min_leaf,
                        });
                    }
                }
            }
        }
        push(Family::Gbm, boosted);
        out
    }
}

pub fn model_id(family: Family, grid_index: usize) -> String {
    format!("{family}_grid_{grid_index}")
}

/// Pooled k-fold cross-validated RMSE of `spec` on the labeled rows of `ds`.
pub fn kfold_rmse(spec: &ModelSpec, ds: &Dataset, k: usize, seed: u64) -> Result<f64, AutomlError> {
    if k < 2 {
        return Err(AutomlError::TooFewFolds(k));
    }
    let labeled = ds.labeled().canonicalized();
    let n = labeled.len();
    if k > n {
        return Err(AutomlError::TooManyFolds { k, rows: n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
        seed,
        FOLD_STREAM,
    )));

    let rows = labeled.rows();
    let mut sse = 0.0;
    let mut start = 0;
    for fold in 0..k {
        let len = n / k + usize::from(fold < n % k);
        let held_out = &order[start..start + len];
        let train_idx: Vec<usize> = order[..start]
            .iter()
            .chain(&order[start + len..])
            .copied()
            .collect();
        start += len;
        let train = labeled.with_rows(train_idx.iter().map(|&i| rows[i].clone()).collect());
        let model = fit(spec, &train, derive_seed(seed, fold as u64))?;
        for &i in held_out {
            let err = model.predict_row(&rows[i].values) - rows[i].target.expect("labeled");
            sse += err * err;
        }
    }
    Ok((sse / n as f64).sqrt())
}

/// Scores every grid point and returns them sorted by CV RMSE. Ties are
/// broken by family name, then grid index. Every candidate uses the same
/// folds and fold seeds, so duplicated grid points score identically.
pub fn run_automl(ds: &Dataset, grid: &GridConfig) -> Result<AutomlReport, AutomlError> {
    if grid.k < 2 {
        return Err(AutomlError::TooFewFolds(grid.k));
    }
    let n = ds.labeled_len();
    if grid.k > n {
        return Err(AutomlError::TooManyFolds { k: grid.k, rows: n });
    }
    let candidates = grid.candidates();
    if candidates.is_empty() {
        return Err(AutomlError::EmptyGrid);
    }
    let scored: Vec<_> = candidates
        .into_par_iter()
        .map(|(family, grid_index, spec)| {
            let score = kfold_rmse(&spec, ds, grid.k, grid.seed);
            (family, grid_index, spec, score)
        })
        .collect();

    let mut leaderboard = Vec::new();
    let mut failures = Vec::new();
    for (family, grid_index, spec, score) in scored {
        let model_id = model_id(family, grid_index);
        match score {
            Ok(cv_rmse) if cv_rmse.is_finite() => leaderboard.push(LeaderboardEntry {
                model_id,
                alias: String::new(),
                family,
                grid_index,
                spec,
                cv_rmse,
                rank: 0,
            }),
            Ok(cv_rmse) => failures.push(FailedCandidate {
                model_id,
                spec,
                error: format!("non-finite CV RMSE {cv_rmse}"),
            }),
            Err(e) => failures.push(FailedCandidate {
                model_id,
                spec,
                error: e.to_string(),
            }),
        }
    }
    leaderboard.sort_by(|a, b| {
        a.cv_rmse
            .total_cmp(&b.cv_rmse)
            .then(a.family.cmp(&b.family))
            .then(a.grid_index.cmp(&b.grid_index))
    });
    for (i, e) in leaderboard.iter_mut().enumerate() {
        e.rank = i + 1;
        e.alias = format!("M{i}");
    }
    Ok(AutomlReport {
        leaderboard,
        failures,
    })
}

/// The `n_per_family` best entries of each family, in board order,
/// re-aliased `M0..Mk`.
pub fn select_top_per_family(
    board: &[LeaderboardEntry],
    n_per_family: usize,
) -> Vec<LeaderboardEntry> {
    let mut taken = std::collections::BTreeMap::<Family, usize>::new();
    let mut out: Vec<LeaderboardEntry> = Vec::new();
    for e in board {
        let count = taken.entry(e.family).or_default();
        if *count < n_per_family {
            *count += 1;
            out.push(e.clone());
        }
    }
    for (i, e) in out.iter_mut().enumerate() {
        e.alias = format!("M{i}");
    }
    out
}

/// Fixed-width text rendering of a leaderboard.
pub fn leaderboard_table(board: &[LeaderboardEntry]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<6} {:<16} {:>10} {:>5}  spec",
        "alias", "model_id", "cv_rmse", "rank"
    );
    for e in board {
        let _ = writeln!(
            out,
            "{:<6} {:<16} {:>10.4} {:>5}  {}",
            e.alias, e.model_id, e.cv_rmse, e.rank, e.spec
        );
    }
    out
}
