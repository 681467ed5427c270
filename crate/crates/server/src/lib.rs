//! Read-only HTTP/JSON service over exported project bundles.
//!
//! Projects are loaded and validated once at startup; every handler reads
//! from the shared immutable store.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ahmose_core::explain::ImportanceVector;
use ahmose_core::project::{self, ProjectBundle, ProjectError, MANIFEST_FILE};
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const BIND_ENV: &str = "AHMOSE_BIND";
pub const DEFAULT_BIND: &str = "127.0.0.1:8093";

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("cannot read project root {path}: {source}")]
    Root {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed project `{name}`: {source}")]
    Project {
        name: String,
        #[source]
        source: Box<ProjectError>,
    },
    #[error("no projects found under {0}")]
    NoProjects(PathBuf),
    #[error("address {0} is already in use")]
    PortBusy(SocketAddr),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
    #[error("server error: {0}")]
    Server(#[source] std::io::Error),
}

/// All projects served, keyed by directory name.
#[derive(Debug, Default)]
pub struct ProjectStore {
    projects: BTreeMap<String, ProjectBundle>,
}

impl ProjectStore {
    pub fn from_bundles(bundles: impl IntoIterator<Item = (String, ProjectBundle)>) -> Self {
        Self {
            projects: bundles.into_iter().collect(),
        }
    }

    /// Loads `root` itself if it is a project directory, otherwise every
    /// immediate subdirectory that contains a manifest.
    pub fn load(root: &Path) -> Result<Self, ServeError> {
        let root_err = |source| ServeError::Root {
            path: root.to_owned(),
            source,
        };
        let mut dirs = Vec::new();
        if root.join(MANIFEST_FILE).is_file() {
            dirs.push(root.to_owned());
        } else {
            for entry in std::fs::read_dir(root).map_err(root_err)? {
                let path = entry.map_err(root_err)?.path();
                if path.join(MANIFEST_FILE).is_file() {
                    dirs.push(path);
                }
            }
        }
        dirs.sort();
        if dirs.is_empty() {
            return Err(ServeError::NoProjects(root.to_owned()));
        }
        let mut projects = BTreeMap::new();
        for dir in dirs {
            let name = dir
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "project".to_owned());
            let bundle = project::import_project(&dir).map_err(|source| ServeError::Project {
                name: name.clone(),
                source: Box::new(source),
            })?;
            projects.insert(name, bundle);
        }
        Ok(Self { projects })
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.projects.keys().map(String::as_str)
    }

    pub fn get(&self, name: &str) -> Option<&ProjectBundle> {
        self.projects.get(name)
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: ErrorBody,
}

pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn not_found(code: &'static str, message: String) -> Self {
        Self {
            status: StatusCode::NOT_FOUND,
            code,
            message,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorResponse {
            error: ErrorBody {
                code: self.code.to_owned(),
                message: self.message,
            },
        };
        (self.status, Json(body)).into_response()
    }
}

type Shared = Arc<ProjectStore>;

#[derive(Debug, Serialize, Deserialize)]
pub struct ProjectListing {
    pub name: String,
    pub target_name: String,
    pub feature_names: Vec<String>,
    pub models: Vec<String>,
    pub interval_sets: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct IntervalSetListing {
    pub name: String,
    pub n_intervals: usize,
    pub features: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ModelListing {
    pub model_id: String,
    pub alias: String,
    pub family: String,
    pub spec: serde_json::Value,
    pub cv_rmse: f64,
    pub rank: usize,
    pub test_rmse: Option<f64>,
    /// WMA per interval set.
    pub wma: BTreeMap<String, f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ExplanationsResponse {
    pub model_id: String,
    pub base_value: f64,
    pub feature_names: Vec<String>,
    pub records: Vec<ahmose_core::explain::ExplanationRecord>,
    pub importance: ImportanceVector,
}

#[derive(Debug, Deserialize)]
pub struct SummaryQuery {
    pub intervals: Option<String>,
}

fn project<'a>(store: &'a ProjectStore, name: &str) -> Result<&'a ProjectBundle, ApiError> {
    store
        .get(name)
        .ok_or_else(|| ApiError::not_found("project_not_found", format!("no project `{name}`")))
}

fn model<'a>(bundle: &'a ProjectBundle, id: &str) -> Result<&'a project::ModelArtifact, ApiError> {
    bundle
        .model(id)
        .ok_or_else(|| ApiError::not_found("model_not_found", format!("no model `{id}`")))
}

async fn list_projects(State(store): State<Shared>) -> Json<Vec<ProjectListing>> {
    Json(
        store
            .projects
            .iter()
            .map(|(name, b)| ProjectListing {
                name: name.clone(),
                target_name: b.manifest.target_name.clone(),
                feature_names: b.manifest.feature_names.clone(),
                models: b.manifest.models.clone(),
                interval_sets: b.manifest.interval_sets.clone(),
            })
            .collect(),
    )
}

async fn get_project(
    State(store): State<Shared>,
    UrlPath(p): UrlPath<String>,
) -> Result<Json<project::ProjectManifest>, ApiError> {
    Ok(Json(project(&store, &p)?.manifest.clone()))
}

async fn list_intervals(
    State(store): State<Shared>,
    UrlPath(p): UrlPath<String>,
) -> Result<Json<Vec<IntervalSetListing>>, ApiError> {
    let bundle = project(&store, &p)?;
    Ok(Json(
        bundle
            .interval_sets
            .iter()
            .map(|s| IntervalSetListing {
                name: s.name.clone(),
                n_intervals: s.intervals.len(),
                features: s.features().into_iter().map(str::to_owned).collect(),
            })
            .collect(),
    ))
}

async fn get_intervals(
    State(store): State<Shared>,
    UrlPath((p, i)): UrlPath<(String, String)>,
) -> Result<Json<ahmose_core::knowledge::IntervalSet>, ApiError> {
    let bundle = project(&store, &p)?;
    bundle
        .interval_set(&i)
        .cloned()
        .map(Json)
        .ok_or_else(|| ApiError::not_found("intervals_not_found", format!("no interval set `{i}`")))
}

async fn list_models(
    State(store): State<Shared>,
    UrlPath(p): UrlPath<String>,
) -> Result<Json<Vec<ModelListing>>, ApiError> {
    let bundle = project(&store, &p)?;
    Ok(Json(
        bundle
            .models
            .iter()
            .map(|m| ModelListing {
                model_id: m.entry.model_id.clone(),
                alias: m.entry.alias.clone(),
                family: m.entry.family.to_string(),
                spec: serde_json::to_value(&m.entry.spec).expect("spec serializes"),
                cv_rmse: m.entry.cv_rmse,
                rank: m.entry.rank,
                test_rmse: m.test_rmse,
                wma: m
                    .summaries
                    .iter()
                    .map(|(k, s)| (k.clone(), s.wma))
                    .collect(),
            })
            .collect(),
    ))
}

async fn get_explanations(
    State(store): State<Shared>,
    UrlPath((p, m)): UrlPath<(String, String)>,
) -> Result<Json<ExplanationsResponse>, ApiError> {
    let art = model(project(&store, &p)?, &m)?;
    Ok(Json(ExplanationsResponse {
        model_id: art.explanations.model_id.clone(),
        base_value: art.explanations.base_value,
        feature_names: art.explanations.feature_names.clone(),
        records: art.explanations.records.clone(),
        importance: art.importance.clone(),
    }))
}

async fn get_summary(
    State(store): State<Shared>,
    UrlPath((p, m)): UrlPath<(String, String)>,
    Query(q): Query<SummaryQuery>,
) -> Result<Json<ahmose_core::agreement::AgreementSummary>, ApiError> {
    let bundle = project(&store, &p)?;
    let art = model(bundle, &m)?;
    let name = match q.intervals {
        Some(name) => name,
        None => bundle
            .manifest
            .interval_sets
            .first()
            .cloned()
            .ok_or_else(|| {
                ApiError::not_found("intervals_not_found", "project has no interval sets".into())
            })?,
    };
    art.summaries.get(&name).cloned().map(Json).ok_or_else(|| {
        ApiError::not_found("intervals_not_found", format!("no interval set `{name}`"))
    })
}

async fn fallback() -> ApiError {
    ApiError::not_found("route_not_found", "no such endpoint".into())
}

pub fn router(store: Arc<ProjectStore>) -> Router {
    Router::new()
        .route("/projects", get(list_projects))
        .route("/projects/{p}", get(get_project))
        .route("/projects/{p}/intervals", get(list_intervals))
        .route("/projects/{p}/intervals/{i}", get(get_intervals))
        .route("/projects/{p}/models", get(list_models))
        .route(
            "/projects/{p}/models/{m}/explanations",
            get(get_explanations),
        )
        .route("/projects/{p}/models/{m}/summary", get(get_summary))
        .fallback(fallback)
        .with_state(store)
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(store: ProjectStore, addr: SocketAddr) -> Result<(), ServeError> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| {
            if source.kind() == std::io::ErrorKind::AddrInUse {
                ServeError::PortBusy(addr)
            } else {
                ServeError::Bind { addr, source }
            }
        })?;
    axum::serve(listener, router(Arc::new(store)))
        .await
        .map_err(ServeError::Server)
}
