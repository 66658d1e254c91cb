use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use ethno_core::llm::backend::{create_backend, BackendError, ChatRequest};
use ethno_core::llm::{
    classify_batch, BackendConfig, BatchError, MemoryCache, PromptConfig, ReasoningLevel,
    TemplateRegistry,
};
use ethno_core::records::{CategoryScheme, NameRecord, RecordSet};
use serde_json::{json, Value};

#[derive(Clone, Default)]
struct Server {
    hits: Arc<AtomicUsize>,
    bodies: Arc<std::sync::Mutex<Vec<Value>>>,
}

async fn openai(State(s): State<Server>, headers: HeaderMap, Json(body): Json<Value>) -> (StatusCode, HeaderMap, String) {
    let n = s.hits.fetch_add(1, Ordering::SeqCst);
    s.bodies.lock().unwrap().push(body.clone());
    let mut out = HeaderMap::new();
    if headers.get("authorization").and_then(|v| v.to_str().ok()) != Some("Bearer good") {
        return (StatusCode::UNAUTHORIZED, out, "bad key".into());
    }
    let prompt = body["messages"][0]["content"].as_str().unwrap_or_default();
    if prompt.contains("Flaky") && n % 2 == 0 {
        out.insert("retry-after", "0".parse().unwrap());
        return (StatusCode::TOO_MANY_REQUESTS, out, "slow down".into());
    }
    if prompt.contains("Broken") {
        return (StatusCode::INTERNAL_SERVER_ERROR, out, "oops".into());
    }
    let reply = json!({"choices": [{"message": {"role": "assistant", "content": "The answer is Hispanic."}}]});
    (StatusCode::OK, out, reply.to_string())
}

async fn gemini(State(s): State<Server>, headers: HeaderMap, Json(body): Json<Value>) -> (StatusCode, String) {
    s.hits.fetch_add(1, Ordering::SeqCst);
    s.bodies.lock().unwrap().push(body);
    if headers.get("x-goog-api-key").and_then(|v| v.to_str().ok()) != Some("good") {
        return (StatusCode::FORBIDDEN, "denied".into());
    }
    let reply = json!({"candidates": [{"content": {"parts": [{"text": "  black\n"}]}}]});
    (StatusCode::OK, reply.to_string())
}

async fn serve() -> (String, Server) {
    let state = Server::default();
    let app = Router::new()
        .route("/v1/chat/completions", post(openai))
        .route("/v1beta/models/{model}", post(gemini))
        .with_state(state.clone());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (format!("http://{addr}"), state)
}

fn scheme() -> Arc<CategoryScheme> {
    Arc::new(CategoryScheme::from_labels("us4", ["White", "Black", "Hispanic", "Asian"]).unwrap())
}

fn records(surnames: &[&str]) -> RecordSet {
    let recs = surnames
        .iter()
        .enumerate()
        .map(|(i, s)| NameRecord {
            id: format!("r{i}"),
            given_names: "Ana".into(),
            surname: s.to_string(),
            geography: [("county".to_string(), "Orange County".to_string())].into(),
            ..Default::default()
        })
        .collect();
    RecordSet::new(recs, scheme(), "test").unwrap()
}

fn req(level: ReasoningLevel) -> ChatRequest {
    ChatRequest {
        model_id: "gpt-x".into(),
        prompt: "Name: Lopez.".into(),
        temperature: 0.0,
        reasoning_level: level,
    }
}

#[tokio::test]
async fn openai_round_trip_and_body() {
    let (base, server) = serve().await;
    let b = create_backend("openai", "good".into(), Some(&format!("{base}/v1"))).unwrap();
    let text = b.complete(&req(ReasoningLevel::Low)).await.unwrap();
    assert_eq!(text, "The answer is Hispanic.");
    let body = server.bodies.lock().unwrap()[0].clone();
    assert_eq!(body["model"], "gpt-x");
    assert_eq!(body["reasoning_effort"], "low");
    assert_eq!(body["temperature"], 0.0);
}

#[tokio::test]
async fn gemini_round_trip() {
    let (base, server) = serve().await;
    let b = create_backend("gemini", "good".into(), Some(&format!("{base}/v1beta"))).unwrap();
    let mut r = req(ReasoningLevel::High);
    r.model_id = "gemini-3-flash".into();
    assert_eq!(b.complete(&r).await.unwrap(), "  black\n");
    let body = server.bodies.lock().unwrap()[0].clone();
    assert_eq!(body["generationConfig"]["thinkingConfig"]["thinkingLevel"], "high");
    assert_eq!(body["contents"][0]["parts"][0]["text"], "Name: Lopez.");
}

#[tokio::test]
async fn status_codes_map_to_errors() {
    let (base, _) = serve().await;
    let bad = create_backend("openai", "wrong".into(), Some(&format!("{base}/v1"))).unwrap();
    assert!(matches!(bad.complete(&req(ReasoningLevel::Off)).await, Err(BackendError::Auth(_))));
    let unreachable = create_backend("openai", "good".into(), Some("http://127.0.0.1:9/v1")).unwrap();
    let err = unreachable.complete(&req(ReasoningLevel::Off)).await.unwrap_err();
    assert!(err.is_retryable(), "{err:?}");
}

#[tokio::test]
async fn batch_over_http() {
    let (base, server) = serve().await;
    let backend = create_backend("openai", "good".into(), Some(&format!("{base}/v1"))).unwrap();
    let set = records(&["Lopez", "Flaky", "Broken", "Kim"]);
    let pcfg = PromptConfig::new(scheme(), "county");
    let bcfg = BackendConfig {
        max_retries: 2,
        backoff_base: Duration::from_millis(5),
        ..BackendConfig::new("openai", "gpt-x")
    };
    let out = classify_batch(&set, &pcfg, &TemplateRegistry::builtin(), &bcfg, backend.as_ref(), &MemoryCache::new())
        .await
        .unwrap();
    let labels: Vec<_> = out.predictions.iter().map(|p| p.label.to_string()).collect();
    assert_eq!(labels, ["Hispanic", "Hispanic", "UNPARSEABLE", "Hispanic"]);
    assert!(out.predictions[2].error.as_deref().unwrap().contains("HTTP 500"));
    assert_eq!(out.usage.errors, 1);
    assert!(out.usage.retries >= 2);
    assert_eq!(out.usage.calls as usize, server.hits.load(Ordering::SeqCst));
}

#[tokio::test]
async fn bad_key_aborts_batch_after_one_request() {
    let (base, server) = serve().await;
    let backend = create_backend("openai", "wrong".into(), Some(&format!("{base}/v1"))).unwrap();
    let set = records(&["A", "B", "C", "D", "E"]);
    let pcfg = PromptConfig::new(scheme(), "county");
    let bcfg = BackendConfig::new("openai", "gpt-x");
    let err = classify_batch(&set, &pcfg, &TemplateRegistry::builtin(), &bcfg, backend.as_ref(), &MemoryCache::new())
        .await
        .unwrap_err();
    assert!(matches!(err, BatchError::Auth { .. }));
    assert_eq!(server.hits.load(Ordering::SeqCst), 1);
}

#[tokio::test]
async fn unsupported_reasoning_is_rejected_before_requests() {
    let (base, server) = serve().await;
    let backend = create_backend("qwen", "good".into(), Some(&format!("{base}/v1"))).unwrap();
    let pcfg = PromptConfig::new(scheme(), "county");
    let bcfg = BackendConfig {
        reasoning_level: ReasoningLevel::High,
        ..BackendConfig::new("qwen", "qwen3")
    };
    let err = classify_batch(&records(&["A"]), &pcfg, &TemplateRegistry::builtin(), &bcfg, backend.as_ref(), &MemoryCache::new())
        .await
        .unwrap_err();
    assert!(matches!(err, BatchError::Backend { source: BackendError::Unsupported(_), .. }));
    assert_eq!(server.hits.load(Ordering::SeqCst), 0);
}
