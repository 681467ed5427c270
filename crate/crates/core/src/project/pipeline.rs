//! The end-to-end flow: AutoML → per-family selection → final fits →
//! explanations → knowledge intervals → agreement summaries → bundle.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use thiserror::Error;

use super::{DatasetDescriptor, ModelArtifact, ProjectBundle, ProjectManifest, SCHEMA_VERSION};
use crate::agreement::summarize;
use crate::automl::{run_automl, select_top_per_family, GridConfig};
use crate::dataset::Dataset;
use crate::explain::{explain_dataset, feature_importance};
use crate::knowledge::{build_intervals, IntervalSet, RuleTable, TargetRange};
use crate::modelzoo::fit;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Load,
    Automl,
    Select,
    Fit,
    Explain,
    Knowledge,
    Summarize,
    Export,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Load => "load",
            Stage::Automl => "automl",
            Stage::Select => "select",
            Stage::Fit => "fit",
            Stage::Explain => "explain",
            Stage::Knowledge => "knowledge",
            Stage::Summarize => "summarize",
            Stage::Export => "export",
        })
    }
}

#[derive(Debug, Error)]
#[error("[{stage}] {message}")]
pub struct PipelineError {
    pub stage: Stage,
    pub message: String,
}

impl PipelineError {
    pub fn new(stage: Stage, message: impl fmt::Display) -> Self {
        Self {
            stage,
            message: message.to_string(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub name: String,
    pub grid: GridConfig,
    pub top_per_family: usize,
    pub radius: f64,
    /// Defaults to the range of the training targets.
    pub target_bounds: Option<TargetRange>,
    /// Authored interval sets to score alongside the rule-derived one.
    pub extra_interval_sets: Vec<IntervalSet>,
}

fn rmse(pred: &[f64], truth: &[f64]) -> f64 {
    let sse: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
    (sse / truth.len() as f64).sqrt()
}

/// Runs every stage and returns the bundle (not yet written to disk).
pub fn build_project(
    train: &Dataset,
    interest: &Dataset,
    rules: &RuleTable,
    config: &PipelineConfig,
) -> Result<ProjectBundle, PipelineError> {
    // Training order never matters downstream.
    let train = train.labeled().canonicalized();
    if interest.feature_names() != train.feature_names() {
        let interest_has_all = train
            .feature_names()
            .iter()
            .all(|f| interest.feature_index(f).is_some());
        if !interest_has_all {
            return Err(PipelineError::new(
                Stage::Load,
                "data of interest lacks some training features",
            ));
        }
    }

    let report =
        run_automl(&train, &config.grid).map_err(|e| PipelineError::new(Stage::Automl, e))?;
    if report.leaderboard.is_empty() {
        return Err(PipelineError::new(
            Stage::Automl,
            format!(
                "every candidate failed ({} failures)",
                report.failures.len()
            ),
        ));
    }
    let selected = select_top_per_family(&report.leaderboard, config.top_per_family);
    if selected.is_empty() {
        return Err(PipelineError::new(
            Stage::Select,
            "no model selected (top-per-family is 0)",
        ));
    }

    let target_bounds = match config.target_bounds {
        Some(b) => b,
        None => {
            let (lo, hi) = train
                .rows()
                .iter()
                .filter_map(|r| r.target)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| {
                    (lo.min(t), hi.max(t))
                });
            TargetRange { lo, hi }
        }
    };
    let built = build_intervals(rules, config.radius, target_bounds)
        .map_err(|e| PipelineError::new(Stage::Knowledge, e))?;
    let mut interval_sets = vec![built.set];
    for extra in &config.extra_interval_sets {
        if interval_sets.iter().any(|s| s.name == extra.name) {
            return Err(PipelineError::new(
                Stage::Knowledge,
                format!("duplicate interval set name `{}`", extra.name),
            ));
        }
        interval_sets.push(extra.clone());
    }

    let labeled_interest = interest.labeled();
    let interest_truth: Vec<f64> = labeled_interest
        .rows()
        .iter()
        .filter_map(|r| r.target)
        .collect();

    let models = selected
        .par_iter()
        .map(|entry| {
            let model = fit(&entry.spec, &train, config.grid.seed)
                .map_err(|e| PipelineError::new(Stage::Fit, format!("{}: {e}", entry.model_id)))?;
            let explanations =
                explain_dataset(&model, &entry.model_id, &train, interest).map_err(|e| {
                    PipelineError::new(Stage::Explain, format!("{}: {e}", entry.model_id))
                })?;
            let importance = feature_importance(&explanations).map_err(|e| {
                PipelineError::new(Stage::Explain, format!("{}: {e}", entry.model_id))
            })?;
            let summaries = interval_sets
                .iter()
                .map(|set| {
                    summarize(&explanations, &importance, set)
                        .map(|s| (set.name.clone(), s))
                        .map_err(|e| {
                            PipelineError::new(Stage::Summarize, format!("{}: {e}", entry.model_id))
                        })
                })
                .collect::<Result<BTreeMap<_, _>, _>>()?;
            let test_rmse = if interest_truth.is_empty() {
                None
            } else {
                let pred = model
                    .predict_dataset(&labeled_interest)
                    .map_err(|e| PipelineError::new(Stage::Fit, e))?;
                Some(rmse(&pred, &interest_truth))
            };
            Ok(ModelArtifact {
                schema_version: SCHEMA_VERSION,
                entry: entry.clone(),
                test_rmse,
                model,
                explanations,
                importance,
                summaries,
            })
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;

    let manifest = ProjectManifest {
        schema_version: SCHEMA_VERSION,
        name: config.name.clone(),
        target_name: train.target_name().to_owned(),
        feature_names: train.feature_names().to_vec(),
        target_bounds,
        seed: config.grid.seed,
        k: config.grid.k,
        top_per_family: config.top_per_family,
        datasets: vec![
            DatasetDescriptor::describe("train", &train),
            DatasetDescriptor::describe("interest", interest),
        ],
        leaderboard: report.leaderboard,
        failures: report.failures,
        models: selected.iter().map(|e| e.model_id.clone()).collect(),
        interval_sets: interval_sets.iter().map(|s| s.name.clone()).collect(),
    };
    let bundle = ProjectBundle {
        manifest,
        interval_sets,
        models,
    };
    bundle
        .validate()
        .map_err(|e| PipelineError::new(Stage::Export, e))?;
    Ok(bundle)
}
