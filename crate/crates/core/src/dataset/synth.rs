//! Synthetic train/test scenarios with a distribution shift.
//!
//! Every feature is cut into labelled intervals; the ground-truth target is
//! constant on each grid cell (an additive sum of per-label effects, clamped
//! to the target bounds). Training rows concentrate on a "diagonal" of the
//! grid where features move together, test rows are drawn independently per
//! feature, so test data visits cells that training rarely saw. The matching
//! rule table records the truth of every cell, weighted either uniformly or
//! by how often the cell occurred.

use std::collections::BTreeMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetError, Observation};
use crate::knowledge::{LabelRange, Rule, RuleFeature, RuleTable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridLabel {
    pub label: String,
    pub lo: f64,
    pub hi: f64,
    /// Additive contribution of this label to the cell truth.
    pub effect: f64,
    pub train_weight: f64,
    pub test_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFeature {
    pub name: String,
    pub labels: Vec<GridLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftConfig {
    pub features: Vec<GridFeature>,
    pub target_name: String,
    pub group_tag_name: String,
    pub intercept: f64,
    pub target_bounds: (f64, f64),
    pub noise_sd: f64,
    pub train_groups: Vec<String>,
    pub test_groups: Vec<String>,
    pub rows_per_group: usize,
    /// Probability that a training row takes all its labels from one shared
    /// quantile (features move together) instead of independent draws.
    pub train_coupling: f64,
    pub rule_weighting: RuleWeighting,
}

/// How rule weights are assigned in the generated rule table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleWeighting {
    /// Weight 1 per cell: the per-label means then reflect each feature's own
    /// effect, free of the training-time coupling between features.
    Uniform,
    /// Occurrence count over train and test rows. Label means inherit the
    /// training coupling, so they mix effects of correlated features.
    Observed,
}

fn label(
    label: &str,
    lo: f64,
    hi: f64,
    effect: f64,
    train_weight: f64,
    test_weight: f64,
) -> GridLabel {
    GridLabel {
        label: label.into(),
        lo,
        hi,
        effect,
        train_weight,
        test_weight,
    }
}

impl Default for ShiftConfig {
    /// Four grape-quality style features on the vineyard interval grid,
    /// 48 rows per year, two training years and one test year.
    fn default() -> Self {
        Self {
            features: vec![
                GridFeature {
                    name: "Anth".into(),
                    labels: vec![
                        label("L", 200.0, 600.0, -1.0, 0.20, 0.30),
                        label("M", 600.0, 800.0, -0.2, 0.45, 0.25),
                        label("H", 800.0, 1000.0, 0.7, 0.25, 0.25),
                        label("VH", 1000.0, 1400.0, 1.4, 0.10, 0.20),
                    ],
                },
                GridFeature {
                    name: "BW".into(),
                    labels: vec![
                        label("L", 1.0, 1.6, 0.5, 0.15, 0.35),
                        label("M", 1.6, 2.0, 0.0, 0.65, 0.30),
                        label("H", 2.0, 2.5, -0.7, 0.20, 0.35),
                    ],
                },
                GridFeature {
                    name: "TSS".into(),
                    labels: vec![
                        label("L", 15.0, 21.0, -0.5, 0.30, 0.50),
                        label("H", 21.0, 30.0, 0.3, 0.70, 0.50),
                    ],
                },
                GridFeature {
                    name: "TA".into(),
                    labels: vec![
                        label("L", 3.0, 5.0, -0.3, 0.15, 0.35),
                        label("M", 5.0, 7.0, 0.0, 0.70, 0.30),
                        label("H", 7.0, 12.0, 0.3, 0.15, 0.35),
                    ],
                },
            ],
            target_name: "GTQ".into(),
            group_tag_name: "year".into(),
            intercept: 3.0,
            target_bounds: (1.0, 5.0),
            noise_sd: 0.3,
            train_groups: vec!["2010".into(), "2011".into()],
            test_groups: vec!["2012".into()],
            rows_per_group: 48,
            train_coupling: 1.0,
            rule_weighting: RuleWeighting::Uniform,
        }
    }
}

impl ShiftConfig {
    // Negated comparisons also reject NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    fn validate(&self) -> Result<(), DatasetError> {
        let bad = |msg: &str| Err(DatasetError::InvalidConfig(msg.to_owned()));
        if self.features.is_empty() {
            return bad("empty grid: no features");
        }
        if self.rows_per_group == 0 || self.train_groups.is_empty() {
            return bad("zero training rows");
        }
        let (lo, hi) = self.target_bounds;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return bad("target bounds must satisfy min < max");
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return bad("noise_sd must be finite and non-negative");
        }
        if !(0.0..=1.0).contains(&self.train_coupling) {
            return bad("train_coupling must lie in [0, 1]");
        }
        for f in &self.features {
            if f.labels.is_empty() {
                return Err(DatasetError::InvalidConfig(format!(
                    "feature `{}` has no intervals",
                    f.name
                )));
            }
            for (i, l) in f.labels.iter().enumerate() {
                if !(l.lo < l.hi) || (i > 0 && f.labels[i - 1].hi > l.lo) {
                    return Err(DatasetError::InvalidConfig(format!(
                        "feature `{}` interval `{}` is empty or out of order",
                        f.name, l.label
                    )));
                }
                if !(l.train_weight >= 0.0 && l.test_weight >= 0.0) {
                    return Err(DatasetError::InvalidConfig(format!(
                        "feature `{}` has a negative sampling weight",
                        f.name
                    )));
                }
            }
            for weights in [
                f.labels.iter().map(|l| l.train_weight).sum::<f64>(),
                f.labels.iter().map(|l| l.test_weight).sum::<f64>(),
            ] {
                if !(weights > 0.0) {
                    return Err(DatasetError::InvalidConfig(format!(
                        "feature `{}` has all-zero sampling weights",
                        f.name
                    )));
                }
            }
        }
        Ok(())
    }

    /// Ground truth of a grid cell given one label index per feature.
    pub fn cell_truth(&self, cell: &[usize]) -> f64 {
        let raw = self.intercept
            + self
                .features
                .iter()
                .zip(cell)
                .map(|(f, &l)| f.labels[l].effect)
                .sum::<f64>();
        raw.clamp(self.target_bounds.0, self.target_bounds.1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftScenario {
    pub train: Dataset,
    pub test: Dataset,
    pub truth_rules: RuleTable,
}

pub fn generate_shift_scenario(
    config: &ShiftConfig,
    seed: u64,
) -> Result<ShiftScenario, DatasetError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, config.noise_sd).expect("validated sd");
    let train_pick: Vec<WeightedIndex<f64>> = config
        .features
        .iter()
        .map(|f| WeightedIndex::new(f.labels.iter().map(|l| l.train_weight)).expect("validated"))
        .collect();
    let test_pick: Vec<WeightedIndex<f64>> = config
        .features
        .iter()
        .map(|f| WeightedIndex::new(f.labels.iter().map(|l| l.test_weight)).expect("validated"))
        .collect();

    let mut counts: BTreeMap<Vec<usize>, u32> = BTreeMap::new();
    let mut make_rows = |groups: &[String], training: bool, rng: &mut ChaCha8Rng| {
        let mut rows = Vec::new();
        for group in groups {
            for _ in 0..config.rows_per_group {
                let cell: Vec<usize> = if training && rng.gen_bool(config.train_coupling) {
                    let u: f64 = rng.gen();
                    config
                        .features
                        .iter()
                        .map(|f| quantile_label(f, u))
                        .collect()
                } else {
                    let pick = if training { &train_pick } else { &test_pick };
                    pick.iter().map(|d| d.sample(rng)).collect()
                };
                let values = config
                    .features
                    .iter()
                    .zip(&cell)
                    .map(|(f, &l)| sample_inside(&f.labels[l], rng))
                    .collect();
                let truth = config.cell_truth(&cell);
                let target = if config.noise_sd > 0.0 {
                    (truth + noise.sample(rng))
                        .clamp(config.target_bounds.0, config.target_bounds.1)
                } else {
                    truth
                };
                *counts.entry(cell).or_default() += 1;
                rows.push(Observation {
                    values,
                    target: Some(target),
                    group_tag: Some(group.clone()),
                });
            }
        }
        rows
    };
    let train_rows = make_rows(&config.train_groups, true, &mut rng);
    let test_rows = make_rows(&config.test_groups, false, &mut rng);

    let names: Vec<String> = config.features.iter().map(|f| f.name.clone()).collect();
    let build = |rows| {
        Dataset::new(
            names.clone(),
            config.target_name.clone(),
            Some(config.group_tag_name.clone()),
            rows,
        )
    };
    let train = build(train_rows)?;
    let test = build(test_rows)?;

    let rules = all_cells(config)
        .into_iter()
        .map(|cell| Rule {
            labels: config
                .features
                .iter()
                .zip(&cell)
                .map(|(f, &l)| (f.name.clone(), f.labels[l].label.clone()))
                .collect(),
            output: config.cell_truth(&cell),
            weight: match config.rule_weighting {
                RuleWeighting::Uniform => 1,
                RuleWeighting::Observed => counts.get(&cell).copied().unwrap_or(0),
            },
        })
        .collect();
    let features = config
        .features
        .iter()
        .map(|f| RuleFeature {
            name: f.name.clone(),
            labels: f
                .labels
                .iter()
                .map(|l| LabelRange {
                    label: l.label.clone(),
                    lo: l.lo,
                    hi: l.hi,
                })
                .collect(),
        })
        .collect();
    let truth_rules =
        RuleTable::new(features, rules).map_err(|e| DatasetError::InvalidConfig(e.to_string()))?;
    Ok(ShiftScenario {
        train,
        test,
        truth_rules,
    })
}

/// Label whose cumulative training weight first reaches quantile `u`.
fn quantile_label(f: &GridFeature, u: f64) -> usize {
    let total: f64 = f.labels.iter().map(|l| l.train_weight).sum();
    let mut acc = 0.0;
    for (i, l) in f.labels.iter().enumerate() {
        acc += l.train_weight / total;
        if u < acc {
            return i;
        }
    }
    f.labels.len() - 1
}

/// A value inside the label's range, `(lo, hi]` for every label (the first
/// label's closed lower end is never hit, which keeps cells unambiguous).
fn sample_inside(l: &GridLabel, rng: &mut ChaCha8Rng) -> f64 {
    let width = l.hi - l.lo;
    // Two decimals, like field measurements; stay strictly above lo.
    let steps = (width * 100.0).round() as i64;
    if steps >= 2 {
        let k = rng.gen_range(1..=steps);
        let v = ((l.lo * 100.0).round() as i64 + k) as f64 / 100.0;
        v.min(l.hi)
    } else {
        l.lo + width * (1.0 - rng.gen::<f64>())
    }
}

fn all_cells(config: &ShiftConfig) -> Vec<Vec<usize>> {
    let mut cells = vec![Vec::new()];
    for f in &config.features {
        cells = cells
            .into_iter()
            .flat_map(|prefix| {
                (0..f.labels.len()).map(move |l| {
                    let mut c = prefix.clone();
                    c.push(l);
                    c
                })
            })
            .collect();
    }
    cells
}
