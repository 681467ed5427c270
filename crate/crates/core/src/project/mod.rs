//! Project bundles: everything the decision interface needs, precomputed and
//! stored as a directory of JSON files.
//!
//! ```text
//! <project>/project.json            manifest, dataset descriptors, leaderboard
//! <project>/intervals/<name>.json   one interval set per file
//! <project>/models/<model_id>.json  model, explanations, importance, summaries
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agreement::AgreementSummary;
use crate::automl::{FailedCandidate, LeaderboardEntry};
use crate::dataset::{feature_ranges, Dataset, FeatureRange};
use crate::explain::{ExplanationSet, ImportanceVector};
use crate::knowledge::{self, IntervalSet, KnowledgeError, TargetRange};
use crate::modelzoo::TrainedModel;

pub mod json;
pub mod pipeline;

pub use pipeline::{build_project, PipelineConfig, PipelineError, Stage};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "project.json";
pub const INTERVALS_DIR: &str = "intervals";
pub const MODELS_DIR: &str = "models";

#[derive(Debug, Error)]
pub enum ProjectError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed JSON: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: unsupported schema_version {found} (expected {expected})")]
    SchemaVersion {
        path: PathBuf,
        found: u32,
        expected: u32,
    },
    #[error("dangling model id `{id}`: {context}")]
    DanglingModel { id: String, context: String },
    #[error("dangling interval set `{name}`: {context}")]
    DanglingIntervalSet { name: String, context: String },
    #[error("unknown feature `{feature}` referenced by {context}")]
    UnknownFeature { feature: String, context: String },
    #[error("name `{0}` is not usable as a file name (use letters, digits, '_', '-', '.')")]
    UnsafeName(String),
    #[error("interval set `{name}`: {source}")]
    Intervals {
        name: String,
        #[source]
        source: KnowledgeError,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub role: String,
    pub n_rows: usize,
    pub n_labeled: usize,
    pub groups: Vec<String>,
    pub feature_ranges: BTreeMap<String, FeatureRange>,
}

impl DatasetDescriptor {
    pub fn describe(role: &str, ds: &Dataset) -> Self {
        Self {
            role: role.to_owned(),
            n_rows: ds.len(),
            n_labeled: ds.labeled_len(),
            groups: ds.groups().into_iter().collect(),
            feature_ranges: feature_ranges(ds),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectManifest {
    pub schema_version: u32,
    pub name: String,
    pub target_name: String,
    pub feature_names: Vec<String>,
    pub target_bounds: TargetRange,
    pub seed: u64,
    pub k: usize,
    pub top_per_family: usize,
    pub datasets: Vec<DatasetDescriptor>,
    /// Every scored candidate, best first.
    pub leaderboard: Vec<LeaderboardEntry>,
    pub failures: Vec<FailedCandidate>,
    /// Selected model ids in alias order.
    pub models: Vec<String>,
    pub interval_sets: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub schema_version: u32,
    /// Leaderboard entry with the selection alias.
    pub entry: LeaderboardEntry,
    /// RMSE on the labeled rows of the data of interest, when there are any.
    pub test_rmse: Option<f64>,
    pub model: TrainedModel,
    pub explanations: ExplanationSet,
    pub importance: ImportanceVector,
    /// Keyed by interval set name.
    pub summaries: BTreeMap<String, AgreementSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectBundle {
    pub manifest: ProjectManifest,
    pub interval_sets: Vec<IntervalSet>,
    pub models: Vec<ModelArtifact>,
}

#[derive(Serialize, Deserialize)]
struct IntervalDocument<T> {
    schema_version: u32,
    #[serde(flatten)]
    set: T,
}

fn check_name(name: &str) -> Result<(), ProjectError> {
    let ok = !name.is_empty()
        && name != "."
        && name != ".."
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
    if ok {
        Ok(())
    } else {
        Err(ProjectError::UnsafeName(name.to_owned()))
    }
}

impl ProjectBundle {
    pub fn model(&self, id: &str) -> Option<&ModelArtifact> {
        self.models.iter().find(|m| m.entry.model_id == id)
    }

    pub fn interval_set(&self, name: &str) -> Option<&IntervalSet> {
        self.interval_sets.iter().find(|s| s.name == name)
    }

    /// Checks that every cross-reference in the bundle resolves.
    pub fn validate(&self) -> Result<(), ProjectError> {
        let m = &self.manifest;
        if m.schema_version != SCHEMA_VERSION {
            return Err(ProjectError::SchemaVersion {
                path: PathBuf::from(MANIFEST_FILE),
                found: m.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        check_name(&m.name)?;
        for name in &m.interval_sets {
            check_name(name)?;
            let set = self
                .interval_set(name)
                .ok_or_else(|| ProjectError::DanglingIntervalSet {
                    name: name.clone(),
                    context: "listed in the manifest but not loaded".into(),
                })?;
            set.validate().map_err(|source| ProjectError::Intervals {
                name: name.clone(),
                source,
            })?;
        }
        for set in &self.interval_sets {
            if !m.interval_sets.contains(&set.name) {
                return Err(ProjectError::DanglingIntervalSet {
                    name: set.name.clone(),
                    context: "loaded but not listed in the manifest".into(),
                });
            }
        }
        for id in &m.models {
            check_name(id)?;
            if !m.leaderboard.iter().any(|e| &e.model_id == id) {
                return Err(ProjectError::DanglingModel {
                    id: id.clone(),
                    context: "selected but absent from the leaderboard".into(),
                });
            }
            if self.model(id).is_none() {
                return Err(ProjectError::DanglingModel {
                    id: id.clone(),
                    context: "selected but no model artifact carries this id".into(),
                });
            }
        }
        for art in &self.models {
            let id = &art.entry.model_id;
            if !m.models.contains(id) {
                return Err(ProjectError::DanglingModel {
                    id: id.clone(),
                    context: "model artifact not listed in the manifest".into(),
                });
            }
            let refs = [
                ("explanations", &art.explanations.model_id),
                ("importance", &art.importance.model_id),
            ];
            for (what, other) in refs {
                if other != id {
                    return Err(ProjectError::DanglingModel {
                        id: other.clone(),
                        context: format!("{what} inside the artifact of `{id}`"),
                    });
                }
            }
            for f in art
                .explanations
                .feature_names
                .iter()
                .chain(&art.model.feature_names)
            {
                if !m.feature_names.contains(f) {
                    return Err(ProjectError::UnknownFeature {
                        feature: f.clone(),
                        context: format!("model `{id}`"),
                    });
                }
            }
            for (key, summary) in &art.summaries {
                if summary.model_id != *id {
                    return Err(ProjectError::DanglingModel {
                        id: summary.model_id.clone(),
                        context: format!("summary `{key}` inside the artifact of `{id}`"),
                    });
                }
                if summary.interval_set != *key || !m.interval_sets.contains(key) {
                    return Err(ProjectError::DanglingIntervalSet {
                        name: key.clone(),
                        context: format!("summary of model `{id}`"),
                    });
                }
            }
        }
        Ok(())
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), ProjectError> {
    fs::write(path, contents).map_err(|source| ProjectError::Io {
        path: path.to_owned(),
        source,
    })
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ProjectError> {
    let text = fs::read_to_string(path).map_err(|source| ProjectError::Io {
        path: path.to_owned(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| ProjectError::Json {
        path: path.to_owned(),
        source,
    })
}

fn canonical<T: Serialize + ?Sized>(value: &T) -> String {
    json::to_canonical_string(value).expect("project documents serialize")
}

/// Writes the bundle under `dir`, replacing the `models/` and `intervals/`
/// subdirectories if present. Output bytes depend only on the bundle.
pub fn export_project(bundle: &ProjectBundle, dir: &Path) -> Result<(), ProjectError> {
    bundle.validate()?;
    let io = |path: &Path| {
        let path = path.to_owned();
        move |source| ProjectError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    for sub in [INTERVALS_DIR, MODELS_DIR] {
        let p = dir.join(sub);
        if p.exists() {
            fs::remove_dir_all(&p).map_err(io(&p))?;
        }
        fs::create_dir_all(&p).map_err(io(&p))?;
    }
    write_file(&dir.join(MANIFEST_FILE), &canonical(&bundle.manifest))?;
    for set in &bundle.interval_sets {
        let doc = IntervalDocument {
            schema_version: knowledge::SCHEMA_VERSION,
            set,
        };
        write_file(
            &dir.join(INTERVALS_DIR).join(format!("{}.json", set.name)),
            &canonical(&doc),
        )?;
    }
    for art in &bundle.models {
        write_file(
            &dir.join(MODELS_DIR)
                .join(format!("{}.json", art.entry.model_id)),
            &canonical(art),
        )?;
    }
    Ok(())
}

/// Loads and validates a project directory.
pub fn import_project(dir: &Path) -> Result<ProjectBundle, ProjectError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest: ProjectManifest = read_json(&manifest_path)?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(ProjectError::SchemaVersion {
            path: manifest_path,
            found: manifest.schema_version,
            expected: SCHEMA_VERSION,
        });
    }
    let mut interval_sets = Vec::new();
    for name in &manifest.interval_sets {
        check_name(name)?;
        let path = dir.join(INTERVALS_DIR).join(format!("{name}.json"));
        if !path.exists() {
            return Err(ProjectError::DanglingIntervalSet {
                name: name.clone(),
                context: format!("{} does not exist", path.display()),
            });
        }
        let text = fs::read_to_string(&path).map_err(|source| ProjectError::Io {
            path: path.clone(),
            source,
        })?;
        let set =
            knowledge::parse_interval_file(&text).map_err(|source| ProjectError::Intervals {
                name: name.clone(),
                source,
            })?;
        interval_sets.push(set);
    }
    let mut models = Vec::new();
    for id in &manifest.models {
        check_name(id)?;
        let path = dir.join(MODELS_DIR).join(format!("{id}.json"));
        if !path.exists() {
            return Err(ProjectError::DanglingModel {
                id: id.clone(),
                context: format!("{} does not exist", path.display()),
            });
        }
        let art: ModelArtifact = read_json(&path)?;
        if art.schema_version != SCHEMA_VERSION {
            return Err(ProjectError::SchemaVersion {
                path,
                found: art.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        if art.entry.model_id != *id {
            return Err(ProjectError::DanglingModel {
                id: art.entry.model_id.clone(),
                context: format!("{} is listed as `{id}`", path.display()),
            });
        }
        models.push(art);
    }
    let bundle = ProjectBundle {
        manifest,
        interval_sets,
        models,
    };
    bundle.validate()?;
    Ok(bundle)
}

/// One row of an offline scoring table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub alias: String,
    pub model_id: String,
    pub wma: f64,
    pub cv_rmse: f64,
    pub cv_rank: usize,
    pub test_rmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub project: String,
    pub interval_set: String,
    /// Best WMA first.
    pub ranking: Vec<ScoreRow>,
    pub summaries: Vec<AgreementSummary>,
}

/// Recomputes agreement summaries for every selected model of `bundle`
/// against `intervals` and ranks them by WMA.
pub fn score_project(
    bundle: &ProjectBundle,
    intervals: &IntervalSet,
) -> Result<ScoreReport, crate::agreement::AgreementError> {
    let summaries = bundle
        .models
        .iter()
        .map(|m| crate::agreement::summarize(&m.explanations, &m.importance, intervals))
        .collect::<Result<Vec<_>, _>>()?;
    let entries: Vec<LeaderboardEntry> = bundle.models.iter().map(|m| m.entry.clone()).collect();
    let ranking = crate::agreement::rank_by_wma(&summaries, &entries)?
        .into_iter()
        .map(|r| ScoreRow {
            test_rmse: bundle.model(&r.model_id).and_then(|m| m.test_rmse),
            alias: r.alias,
            model_id: r.model_id,
            wma: r.wma,
            cv_rmse: r.cv_rmse,
            cv_rank: r.cv_rank,
        })
        .collect();
    Ok(ScoreReport {
        project: bundle.manifest.name.clone(),
        interval_set: intervals.name.clone(),
        ranking,
        summaries,
    })
}

impl ScoreReport {
    pub fn table(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<6} {:<16} {:>7} {:>9} {:>7} {:>10}",
            "alias", "model", "WMA", "cv_rmse", "cv_rank", "test_rmse"
        );
        for r in &self.ranking {
            let test = r
                .test_rmse
                .map_or_else(|| "-".to_owned(), |t| format!("{t:.3}"));
            let _ = writeln!(
                out,
                "{:<6} {:<16} {:>7.3} {:>9.3} {:>7} {:>10}",
                r.alias, r.model_id, r.wma, r.cv_rmse, r.cv_rank, test
            );
        }
        out
    }
}
