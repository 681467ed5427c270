use std::sync::Arc;

use ahmose_core::automl::GridConfig;
use ahmose_core::dataset::synth::{generate_shift_scenario, ShiftConfig};
use ahmose_core::project::{build_project, export_project, PipelineConfig, ProjectBundle};
use ahmose_server::{router, ErrorResponse, ProjectStore};
use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use serde_json::Value;
use tower::ServiceExt;

fn small_bundle() -> ProjectBundle {
    let cfg = ShiftConfig {
        rows_per_group: 12,
        ..ShiftConfig::default()
    };
    let sc = generate_shift_scenario(&cfg, 7).unwrap();
    let mut grid = GridConfig::empty(3, 11);
    grid.glm.l2_penalty = vec![0.01, 1.0];
    grid.tree.max_depth = vec![2];
    grid.tree.min_leaf = vec![2];
    let config = PipelineConfig {
        name: "mini".into(),
        grid,
        top_per_family: 1,
        radius: 0.5,
        target_bounds: None,
        extra_interval_sets: vec![],
    };
    build_project(&sc.train, &sc.test, &sc.truth_rules, &config).unwrap()
}

async fn get(app: &axum::Router, uri: &str) -> (StatusCode, Value) {
    let resp = app
        .clone()
        .oneshot(Request::get(uri).body(Body::empty()).unwrap())
        .await
        .unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, serde_json::from_slice(&bytes).unwrap())
}

fn app_with(bundle: ProjectBundle) -> axum::Router {
    router(Arc::new(ProjectStore::from_bundles([(
        "mini".to_owned(),
        bundle,
    )])))
}

#[tokio::test]
async fn lists_and_fetches_resources() {
    let bundle = small_bundle();
    let app = app_with(bundle.clone());

    let (s, projects) = get(&app, "/projects").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(projects[0]["name"], "mini");

    let (s, manifest) = get(&app, "/projects/mini").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(manifest["leaderboard"].as_array().unwrap().len(), 3);

    let (_, sets) = get(&app, "/projects/mini/intervals").await;
    let set_name = sets[0]["name"].as_str().unwrap().to_owned();
    let (s, set) = get(&app, &format!("/projects/mini/intervals/{set_name}")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(set["name"], set_name.as_str());

    let (_, models) = get(&app, "/projects/mini/models").await;
    assert_eq!(models.as_array().unwrap().len(), 2);
    let id = models[0]["model_id"].as_str().unwrap().to_owned();

    let (s, ex) = get(&app, &format!("/projects/mini/models/{id}/explanations")).await;
    assert_eq!(s, StatusCode::OK);
    let art = bundle.model(&id).unwrap();
    assert_eq!(
        ex["records"].as_array().unwrap().len(),
        art.explanations.records.len()
    );
    assert_eq!(
        ex["base_value"].as_f64().unwrap(),
        art.explanations.base_value
    );
}

#[tokio::test]
async fn summary_matches_offline_and_defaults_to_first_set() {
    let bundle = small_bundle();
    let app = app_with(bundle.clone());
    let art = &bundle.models[0];
    let id = &art.entry.model_id;
    let first = &bundle.manifest.interval_sets[0];

    let (s, explicit) = get(
        &app,
        &format!("/projects/mini/models/{id}/summary?intervals={first}"),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    let (_, implicit) = get(&app, &format!("/projects/mini/models/{id}/summary")).await;
    assert_eq!(explicit, implicit);
    assert_eq!(
        explicit,
        serde_json::to_value(&art.summaries[first]).unwrap()
    );
}

#[tokio::test]
async fn not_found_codes() {
    let app = app_with(small_bundle());
    for (uri, code) in [
        ("/projects/nope", "project_not_found"),
        ("/projects/nope/models", "project_not_found"),
        (
            "/projects/mini/models/GLM_grid_99/explanations",
            "model_not_found",
        ),
        ("/projects/mini/intervals/nope", "intervals_not_found"),
        (
            "/projects/mini/models/GLM_grid_1/summary?intervals=nope",
            "intervals_not_found",
        ),
        ("/elsewhere", "route_not_found"),
    ] {
        let (s, body) = get(&app, uri).await;
        assert_eq!(s, StatusCode::NOT_FOUND, "{uri}");
        let err: ErrorResponse = serde_json::from_value(body).unwrap();
        assert_eq!(err.error.code, code, "{uri}");
    }
}

#[tokio::test]
async fn writes_are_rejected() {
    let app = app_with(small_bundle());
    let resp = app
        .oneshot(Request::post("/projects/mini").body(Body::empty()).unwrap())
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::METHOD_NOT_ALLOWED);
}

#[test]
fn loads_exported_projects_from_root() {
    let root = tempfile::tempdir().unwrap();
    export_project(&small_bundle(), &root.path().join("mini")).unwrap();
    let store = ProjectStore::load(root.path()).unwrap();
    assert_eq!(store.names().collect::<Vec<_>>(), ["mini"]);
    // Pointing at the project directory itself also works.
    let single = ProjectStore::load(&root.path().join("mini")).unwrap();
    assert_eq!(single.names().count(), 1);
}

#[test]
fn empty_root_is_an_error() {
    let root = tempfile::tempdir().unwrap();
    assert!(ProjectStore::load(root.path()).is_err());
}

#[tokio::test]
async fn busy_port_is_reported() {
    let held = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = held.local_addr().unwrap();
    let err = ahmose_server::serve(ProjectStore::default(), addr)
        .await
        .unwrap_err();
    assert!(matches!(err, ahmose_server::ServeError::PortBusy(a) if a == addr));
}
