use std::time::Instant;

use airwrite_core::model::{Model, ModelConfig};
use airwrite_core::pipeline::Recognizer;
use airwrite_core::training::{Checkpoint, TrainingMetadata};
use airwrite_core::trajectory::{builtin_templates, DEFAULT_SPACING};
use airwrite_core::vocab::Vocabulary;
use airwrite_service::{
    app, ErrorBody, HealthResponse, LabelsResponse, LoadedModel, RecognizeResponse, ServiceState,
};
use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

const LABELS: [&str; 7] = ["a", "b", "c", "d", "e", "f", "g"];

fn small_model(classes: usize) -> Model {
    let cfg = ModelConfig {
        channels: 16,
        heads: 4,
        head_hidden: 16,
        ..ModelConfig::desk(classes)
    };
    Model::new(cfg, 3).unwrap()
}

fn loaded() -> LoadedModel {
    let vocab = Vocabulary::from_labels(LABELS).unwrap();
    LoadedModel::new(
        Recognizer::new(small_model(LABELS.len()), vocab, DEFAULT_SPACING).unwrap(),
        "test-v1",
    )
}

fn ready_app() -> Router {
    app(ServiceState::with_model(loaded()), None)
}

async fn send(
    app: &Router,
    method: Method,
    uri: &str,
    body: Option<String>,
) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if body.is_some() {
        req = req.header(header::CONTENT_TYPE, "application/json");
    }
    let req = req.body(body.map_or_else(Body::empty, Body::from)).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or(Value::Null)
    };
    (status, value)
}

async fn post_recognize(app: &Router, body: Value) -> (StatusCode, Value) {
    send(app, Method::POST, "/api/recognize", Some(body.to_string())).await
}

fn line(n: usize) -> Vec<(f64, f64, u32)> {
    (0..n).map(|i| (i as f64 * 3.0, i as f64, 1)).collect()
}

fn error_code(v: &Value) -> String {
    serde_json::from_value::<ErrorBody>(v.clone()).unwrap().code
}

#[tokio::test]
async fn straight_line_gets_five_sorted_candidates() {
    let app = ready_app();
    let (status, body) = post_recognize(&app, json!({ "points": line(20) })).await;
    assert_eq!(status, StatusCode::OK);
    let resp: RecognizeResponse = serde_json::from_value(body).unwrap();
    assert_eq!(resp.candidates.len(), 5);
    let total: f64 = resp.candidates.iter().map(|c| c.prob).sum();
    assert!(total <= 1.0 + 1e-12);
    assert!(resp.candidates.windows(2).all(|w| w[0].prob >= w[1].prob));
    assert!(resp
        .candidates
        .iter()
        .all(|c| LABELS.contains(&c.label.as_str())));
    assert!(resp.latency_ms >= 0.0);
}

#[tokio::test]
async fn topk_is_capped_by_class_count() {
    let app = ready_app();
    let (status, body) = post_recognize(&app, json!({ "points": line(12), "topk": 50 })).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["candidates"].as_array().unwrap().len(), LABELS.len());

    let (status, body) = post_recognize(&app, json!({ "points": line(12), "topk": 2 })).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["candidates"].as_array().unwrap().len(), 2);
}

#[tokio::test]
async fn topk_out_of_range_is_rejected() {
    let app = ready_app();
    for k in [0, 51] {
        let (status, body) = post_recognize(&app, json!({ "points": line(12), "topk": k })).await;
        assert_eq!(status, StatusCode::BAD_REQUEST);
        assert_eq!(error_code(&body), "malformed");
    }
}

#[tokio::test]
async fn two_points_is_too_short() {
    let app = ready_app();
    let (status, body) = post_recognize(&app, json!({ "points": line(2) })).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(error_code(&body), "too_short");
}

#[tokio::test]
async fn stroke_ids_must_be_monotone() {
    let app = ready_app();
    for points in [
        json!([[0, 0, 1], [1, 0, 2], [2, 0, 1]]),
        json!([[0, 0, 2], [1, 0, 2], [2, 0, 2]]),
        json!([[0, 0, 1], [1, 0, 3], [2, 0, 3]]),
    ] {
        let (status, body) = post_recognize(&app, json!({ "points": points })).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{points}");
        assert_eq!(error_code(&body), "non_monotone");
    }
}

#[tokio::test]
async fn malformed_bodies_are_rejected() {
    let app = ready_app();
    for body in [
        "not json",
        "{}",
        r#"{"points": [[0, 0]]}"#,
        r#"{"points": [[0, 0, 1.5], [1, 1, 1], [2, 2, 1]]}"#,
        r#"{"points": "abc"}"#,
    ] {
        let (status, v) = send(&app, Method::POST, "/api/recognize", Some(body.into())).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
        assert_eq!(error_code(&v), "malformed", "{body}");
    }
}

#[tokio::test]
async fn more_than_ten_thousand_points_is_too_large() {
    let app = ready_app();
    let (status, body) = post_recognize(&app, json!({ "points": line(10_001) })).await;
    assert_eq!(status, StatusCode::PAYLOAD_TOO_LARGE);
    assert_eq!(error_code(&body), "too_large");

    let (status, _) = post_recognize(&app, json!({ "points": line(10_000) })).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn identical_requests_get_identical_candidates() {
    let app = ready_app();
    let req = json!({ "points": line(30), "topk": 7 });
    let (_, a) = post_recognize(&app, req.clone()).await;
    let (_, b) = post_recognize(&app, req).await;
    assert_eq!(a["candidates"], b["candidates"]);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_requests_agree() {
    let app = ready_app();
    let req = json!({ "points": line(40), "topk": 7 });
    let handles: Vec<_> = (0..16)
        .map(|_| {
            let app = app.clone();
            let req = req.clone();
            tokio::spawn(async move { post_recognize(&app, req).await })
        })
        .collect();
    let mut results = Vec::new();
    for h in handles {
        let (status, body) = h.await.unwrap();
        assert_eq!(status, StatusCode::OK);
        results.push(body["candidates"].clone());
    }
    assert!(results.windows(2).all(|w| w[0] == w[1]));
}

#[tokio::test]
async fn labels_in_class_index_order() {
    let app = ready_app();
    let (status, body) = send(&app, Method::GET, "/api/labels", None).await;
    assert_eq!(status, StatusCode::OK);
    let labels: LabelsResponse = serde_json::from_value(body.clone()).unwrap();
    assert_eq!(labels.labels, LABELS);
    let (_, again) = send(&app, Method::GET, "/api/labels", None).await;
    assert_eq!(body, again);
}

#[tokio::test]
async fn labels_match_checkpoint_header() {
    let templates = builtin_templates();
    let vocab = Vocabulary::from_labels(templates.iter().map(|t| t.label.as_str())).unwrap();
    let ckpt = Checkpoint::new(
        small_model(vocab.len()),
        vocab.clone(),
        TrainingMetadata {
            model_version: "glyphs-20".into(),
            ..TrainingMetadata::default()
        },
    );
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.awck");
    ckpt.save(&path).unwrap();

    let app = app(
        ServiceState::with_model(LoadedModel::load(&path).unwrap()),
        None,
    );
    let (_, body) = send(&app, Method::GET, "/api/labels", None).await;
    let labels: LabelsResponse = serde_json::from_value(body).unwrap();
    assert_eq!(labels.labels.len(), 20);
    assert_eq!(labels.labels, vocab.symbols());

    let (_, body) = send(&app, Method::GET, "/api/health", None).await;
    let health: HealthResponse = serde_json::from_value(body).unwrap();
    assert_eq!(health.model_version.as_deref(), Some("glyphs-20"));
}

#[tokio::test]
async fn health_is_unavailable_until_loaded() {
    let state = ServiceState::new();
    let app = app(state.clone(), None);
    let (status, body) = send(&app, Method::GET, "/api/health", None).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(body["status"], "loading");
    let (status, _) = post_recognize(&app, json!({ "points": line(12) })).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);

    assert!(state.install(loaded()));
    assert!(!state.install(loaded()));
    let (status, body) = send(&app, Method::GET, "/api/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "ok");
    assert_eq!(body["model_version"], "test-v1");
}

#[tokio::test]
async fn cors_is_permissive() {
    let app = ready_app();
    let req = Request::builder()
        .method(Method::OPTIONS)
        .uri("/api/recognize")
        .header(header::ORIGIN, "http://localhost:5173")
        .header(header::ACCESS_CONTROL_REQUEST_METHOD, "POST")
        .body(Body::empty())
        .unwrap();
    let resp = app.oneshot(req).await.unwrap();
    assert!(resp.status().is_success());
    assert_eq!(
        resp.headers()
            .get(header::ACCESS_CONTROL_ALLOW_ORIGIN)
            .unwrap(),
        "*"
    );
}

#[tokio::test]
async fn static_files_served_outside_api() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<p>pad</p>").unwrap();
    let app = app(
        ServiceState::with_model(loaded()),
        Some(dir.path().to_path_buf()),
    );
    let req = Request::builder()
        .uri("/index.html")
        .body(Body::empty())
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    assert_eq!(&bytes[..], b"<p>pad</p>");

    let (status, _) = send(&app, Method::GET, "/api/health", None).await;
    assert_eq!(status, StatusCode::OK);
}

/// Soft latency target for a 500-point trajectory on the desk model; logged,
/// not asserted.
#[tokio::test]
async fn desk_model_latency_is_logged() {
    let vocab = Vocabulary::from_labels(LABELS).unwrap();
    let model = Model::new(ModelConfig::desk(LABELS.len()), 1).unwrap();
    let app = app(
        ServiceState::with_model(LoadedModel::new(
            Recognizer::new(model, vocab, DEFAULT_SPACING).unwrap(),
            "desk",
        )),
        None,
    );
    let points: Vec<(f64, f64, u32)> = (0..500)
        .map(|i| {
            let t = i as f64 / 500.0 * std::f64::consts::TAU;
            (t.cos(), t.sin(), 1 + (i >= 250) as u32)
        })
        .collect();
    let start = Instant::now();
    let (status, body) = post_recognize(&app, json!({ "points": points })).await;
    assert_eq!(status, StatusCode::OK);
    eprintln!(
        "500-point desk-model request: {:.1} ms round trip, {:.1} ms reported",
        start.elapsed().as_secs_f64() * 1e3,
        body["latency_ms"].as_f64().unwrap()
    );
}
