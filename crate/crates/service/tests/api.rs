use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use gforge_service::{router, ApiSession};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/replay").join(name)
}

fn app(root: &Path) -> Router {
    router(ApiSession::new(root))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<&str>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

async fn create(app: &Router, config: &str, run_id: &str) -> Value {
    let body = json!({ "config_path": fixture(config), "run_id": run_id }).to_string();
    let (status, v) = call(app, "POST", "/api/v1/runs", Some(&body)).await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
    v
}

async fn wait_for(app: &Router, run_id: &str, target: &str) -> Value {
    let start = Instant::now();
    loop {
        let (status, v) = call(app, "GET", &format!("/api/v1/runs/{run_id}/status?wait=2&since=Running"), None).await;
        assert_eq!(status, StatusCode::OK, "{v}");
        if v["status"] == target {
            return v;
        }
        assert!(start.elapsed() < Duration::from_secs(30), "run {run_id} stuck at {v}");
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn auto_run_completes_and_is_browsable() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    create(&app, "auto.toml", "auto").await;
    let s = wait_for(&app, "auto", "Completed").await;
    assert_eq!(s["iterations"], 3);
    assert_eq!(s["gate_trajectory"].as_array().unwrap().len(), 3);

    let (status, list) = call(&app, "GET", "/api/v1/runs", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(list.as_array().unwrap().len(), 1);

    let (status, rec) = call(&app, "GET", "/api/v1/runs/auto", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(rec["iterations"].as_array().unwrap().len(), 3);

    let (status, it) = call(&app, "GET", "/api/v1/runs/auto/iterations/0", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(it["passed"], false);

    let (status, rep) = call(&app, "GET", "/api/v1/runs/auto/iterations/0/report", None).await;
    assert_eq!(status, StatusCode::OK);
    assert!(!rep["report"]["items"].as_array().unwrap().is_empty());
    let shares: f64 = rep["factors"].as_object().unwrap().values().map(|v| v.as_f64().unwrap()).sum();
    assert!((shares - 1.0).abs() < 1e-9);

    // A passing iteration has no report.
    let (status, _) = call(&app, "GET", "/api/v1/runs/auto/iterations/1/report", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (status, lineage) = call(&app, "GET", "/api/v1/runs/auto/guidelines", None).await;
    assert_eq!(status, StatusCode::OK);
    let lineage = lineage.as_array().unwrap();
    assert_eq!(lineage.len(), 2);
    let root = lineage[0]["version_id"].as_str().unwrap();
    let child = lineage[1]["version_id"].as_str().unwrap();
    assert_eq!(lineage[1]["parent_version"], root);
    assert_eq!(lineage[1]["author"], "llm");

    let (status, g) = call(&app, "GET", &format!("/api/v1/runs/auto/guidelines/{child}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(g["version_id"], child);
    assert_eq!(g["parent_version"], root);
    assert!(g["rendered"].as_str().unwrap().starts_with('#'));

    let (status, d) = call(&app, "GET", &format!("/api/v1/runs/auto/guidelines/{root}/diff/{child}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert!(!d["entries"].as_array().unwrap().is_empty(), "{d}");
    let (status, same) = call(&app, "GET", &format!("/api/v1/runs/auto/guidelines/{child}/diff/{child}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(same["entries"], json!([]));

    let (status, _) = call(&app, "GET", "/api/v1/runs/auto/guidelines/deadbeef", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    // The run is completed, so there is nothing to review.
    let (status, e) = call(&app, "POST", "/api/v1/runs/auto/review", Some(r#"{"decision":"approve"}"#)).await;
    assert_eq!(status, StatusCode::CONFLICT, "{e}");
    assert!(e["error"].is_string());

    // Re-using the id conflicts.
    let body = json!({ "config_path": fixture("auto.toml"), "run_id": "auto" }).to_string();
    let (status, _) = call(&app, "POST", "/api/v1/runs", Some(&body)).await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn review_gate_over_http() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    create(&app, "hitl.toml", "h").await;
    let s = wait_for(&app, "h", "AwaitingReview").await;
    assert_eq!(s["awaiting_review"], 0);

    let (status, e) = call(&app, "POST", "/api/v1/runs/h/review", Some(r#"{"decision":"perhaps"}"#)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST, "{e}");
    let (status, _) = call(&app, "POST", "/api/v1/runs/h/review", Some("not json")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let bad_edit = r#"{"decision":"edit","edits":[{"op":"replace_body","section_id":"no-such-section","body":"x"}],"rationale":"r"}"#;
    let (status, e) = call(&app, "POST", "/api/v1/runs/h/review", Some(bad_edit)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST, "{e}");

    let (status, r) = call(&app, "POST", "/api/v1/runs/h/review", Some(r#"{"iteration":0,"decision":"approve"}"#)).await;
    assert_eq!(status, StatusCode::OK, "{r}");
    assert_eq!(r["duplicate"], false);
    assert_eq!(r["outcome"]["kind"], "revised");

    let s = wait_for(&app, "h", "Completed").await;
    assert_eq!(s["gate_trajectory"].as_array().unwrap().len(), 3);

    // Resubmitting the same decision for the same iteration is a no-op.
    let (status, r) = call(&app, "POST", "/api/v1/runs/h/review", Some(r#"{"iteration":0,"decision":"approve"}"#)).await;
    assert_eq!(status, StatusCode::OK, "{r}");
    assert_eq!(r["duplicate"], true);
}

#[tokio::test]
async fn errors_and_read_only() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    for uri in [
        "/api/v1/runs/nope",
        "/api/v1/runs/nope/status",
        "/api/v1/runs/nope/iterations/0",
        "/api/v1/runs/nope/guidelines",
        "/api/v1/elsewhere",
    ] {
        let (status, v) = call(&app, "GET", uri, None).await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{uri}");
        assert!(v["error"].is_string(), "{uri}: {v}");
    }
    let (status, _) = call(&app, "POST", "/api/v1/runs/nope/review", Some(r#"{"decision":"approve"}"#)).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, "POST", "/api/v1/runs", Some(r#"{"config_path":"a","config":{}}"#)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&app, "POST", "/api/v1/runs", Some(r#"{"unexpected":1}"#)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let mut session = ApiSession::new(dir.path());
    session.read_only = true;
    let ro = router(session);
    let body = json!({ "config_path": fixture("auto.toml") }).to_string();
    let (status, _) = call(&ro, "POST", "/api/v1/runs", Some(&body)).await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    let (status, _) = call(&ro, "POST", "/api/v1/runs/x/review", Some(r#"{"decision":"approve"}"#)).await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    let (status, list) = call(&ro, "GET", "/api/v1/runs", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(list, json!([]));
}

#[tokio::test]
async fn serves_console_assets() {
    let store = tempfile::tempdir().unwrap();
    let assets = tempfile::tempdir().unwrap();
    std::fs::write(assets.path().join("index.html"), "<html>console</html>").unwrap();
    let mut session = ApiSession::new(store.path());
    session.assets = Some(assets.path().to_path_buf());
    let app = router(session);
    let (status, body) = call(&app, "GET", "/index.html", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, "<html>console</html>");
}
