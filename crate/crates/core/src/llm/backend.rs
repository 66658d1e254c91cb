//! Chat-completion backends: HTTP adapters, the adapter registry, and an
//! instrumented mock for offline runs and tests.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde_json::{json, Value};

use super::cache::{digest_fields, ReasoningLevel};

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub model_id: String,
    pub prompt: String,
    pub temperature: f64,
    pub reasoning_level: ReasoningLevel,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("request timed out")]
    Timeout,
    #[error("rate limited")]
    RateLimited { retry_after: Option<Duration> },
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("protocol error: {0}")]
    Protocol(String),
}

impl BackendError {
    /// Transport failures, timeouts and rate limits are worth retrying.
    /// Anything the server delivered and we could not use is not.
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            BackendError::Transport(_) | BackendError::Timeout | BackendError::RateLimited { .. }
        )
    }
}

#[async_trait]
pub trait ChatBackend: Send + Sync {
    fn id(&self) -> &str;

    /// Rejects reasoning levels the adapter cannot express.
    fn check_reasoning(&self, level: ReasoningLevel) -> Result<(), BackendError>;

    async fn complete(&self, req: &ChatRequest) -> Result<String, BackendError>;
}

/// How an OpenAI-style adapter expresses a reasoning level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReasoningStyle {
    /// `reasoning_effort: minimal|low|high`; off omits the field.
    Effort,
    /// `reasoning: {effort: ...}`; off omits the field.
    EffortObject,
    /// `enable_thinking: bool`; only off and on.
    Toggle,
    /// No control; only off.
    Fixed,
}

impl ReasoningStyle {
    fn check(self, backend: &str, level: ReasoningLevel) -> Result<(), BackendError> {
        use ReasoningLevel::*;
        let ok = match self {
            ReasoningStyle::Effort | ReasoningStyle::EffortObject => level != On,
            ReasoningStyle::Toggle => matches!(level, Off | On),
            ReasoningStyle::Fixed => level == Off,
        };
        if ok {
            Ok(())
        } else {
            Err(BackendError::Unsupported(format!(
                "backend {backend:?} cannot express reasoning level {level}"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    OpenAi(ReasoningStyle),
    Gemini,
}

/// Known backends: id, protocol, default base URL.
pub const REGISTRY: &[(&str, Protocol, &str)] = &[
    ("openai", Protocol::OpenAi(ReasoningStyle::Effort), "https://api.openai.com/v1"),
    ("openrouter", Protocol::OpenAi(ReasoningStyle::EffortObject), "https://openrouter.ai/api/v1"),
    ("qwen", Protocol::OpenAi(ReasoningStyle::Toggle), "https://dashscope-intl.aliyuncs.com/compatible-mode/v1"),
    ("deepseek", Protocol::OpenAi(ReasoningStyle::Fixed), "https://api.deepseek.com/v1"),
    ("gemini", Protocol::Gemini, "https://generativelanguage.googleapis.com/v1beta"),
];

pub fn api_key_var(backend_id: &str) -> String {
    let id: String = backend_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_uppercase() } else { '_' })
        .collect();
    format!("ETHNO_API_KEY_{id}")
}

pub fn base_url_var(backend_id: &str) -> String {
    api_key_var(backend_id).replace("API_KEY", "BASE_URL")
}

/// Builds a registered adapter. The key comes from `ETHNO_API_KEY_<ID>`;
/// `ETHNO_BASE_URL_<ID>` overrides the endpoint.
pub fn backend_from_env(backend_id: &str) -> Result<Arc<dyn ChatBackend>, BackendError> {
    let var = api_key_var(backend_id);
    let key = std::env::var(&var)
        .ok()
        .filter(|k| !k.trim().is_empty())
        .ok_or_else(|| BackendError::Auth(format!("{var} is not set")))?;
    let base = std::env::var(base_url_var(backend_id)).ok();
    create_backend(backend_id, key, base.as_deref())
}

pub fn create_backend(
    backend_id: &str,
    api_key: String,
    base_url: Option<&str>,
) -> Result<Arc<dyn ChatBackend>, BackendError> {
    let (id, protocol, default_url) = REGISTRY
        .iter()
        .find(|(id, _, _)| *id == backend_id)
        .ok_or_else(|| {
            let known: Vec<_> = REGISTRY.iter().map(|r| r.0).collect();
            BackendError::Unsupported(format!(
                "unknown backend {backend_id:?}; known: {}",
                known.join(", ")
            ))
        })?;
    let base_url = base_url.unwrap_or(default_url).trim_end_matches('/').to_string();
    let client = reqwest::Client::builder()
        .build()
        .map_err(|e| BackendError::Transport(e.to_string()))?;
    Ok(Arc::new(HttpBackend {
        id: id.to_string(),
        protocol: *protocol,
        base_url,
        api_key,
        client,
    }))
}

pub struct HttpBackend {
    id: String,
    protocol: Protocol,
    base_url: String,
    api_key: String,
    client: reqwest::Client,
}

/// JSON body for a request in the given protocol.
pub fn request_body(protocol: Protocol, req: &ChatRequest) -> Value {
    let level = req.reasoning_level;
    match protocol {
        Protocol::OpenAi(style) => {
            let mut body = json!({
                "model": req.model_id,
                "messages": [{"role": "user", "content": req.prompt}],
                "temperature": req.temperature,
            });
            let obj = body.as_object_mut().expect("object literal");
            match (style, level) {
                (_, ReasoningLevel::Off) if style != ReasoningStyle::Toggle => {}
                (ReasoningStyle::Effort, l) => {
                    obj.insert("reasoning_effort".into(), json!(l.as_str()));
                }
                (ReasoningStyle::EffortObject, l) => {
                    obj.insert("reasoning".into(), json!({"effort": l.as_str()}));
                }
                (ReasoningStyle::Toggle, l) => {
                    obj.insert("enable_thinking".into(), json!(l == ReasoningLevel::On));
                }
                (ReasoningStyle::Fixed, _) => {}
            }
            body
        }
        Protocol::Gemini => {
            let mut gen = json!({"temperature": req.temperature});
            if level != ReasoningLevel::Off {
                gen["thinkingConfig"] = json!({"thinkingLevel": level.as_str()});
            }
            json!({
                "contents": [{"role": "user", "parts": [{"text": req.prompt}]}],
                "generationConfig": gen,
            })
        }
    }
}

/// Pulls the answer text out of a response body.
pub fn extract_text(protocol: Protocol, body: &Value) -> Result<String, BackendError> {
    let missing = || BackendError::Protocol(format!("no answer text in response: {body}"));
    match protocol {
        Protocol::OpenAi(_) => body
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(missing),
        Protocol::Gemini => {
            let parts = body
                .pointer("/candidates/0/content/parts")
                .and_then(Value::as_array)
                .ok_or_else(missing)?;
            let text: String = parts
                .iter()
                .filter(|p| !p.get("thought").and_then(Value::as_bool).unwrap_or(false))
                .filter_map(|p| p.get("text").and_then(Value::as_str))
                .collect();
            Ok(text)
        }
    }
}

/// Maps an HTTP status to an error, `None` for success.
pub fn status_error(status: u16, retry_after: Option<&str>, body: &str) -> Option<BackendError> {
    let snippet: String = body.chars().take(200).collect();
    match status {
        200..=299 => None,
        401 | 403 => Some(BackendError::Auth(format!("HTTP {status}: {snippet}"))),
        429 => Some(BackendError::RateLimited {
            retry_after: retry_after
                .and_then(|v| v.trim().parse::<f64>().ok())
                .filter(|s| s.is_finite() && *s >= 0.0)
                .map(Duration::from_secs_f64),
        }),
        408 | 500..=599 => Some(BackendError::Transport(format!("HTTP {status}: {snippet}"))),
        _ => Some(BackendError::Protocol(format!("HTTP {status}: {snippet}"))),
    }
}

#[async_trait]
impl ChatBackend for HttpBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn check_reasoning(&self, level: ReasoningLevel) -> Result<(), BackendError> {
        match self.protocol {
            Protocol::OpenAi(style) => style.check(&self.id, level),
            Protocol::Gemini if level == ReasoningLevel::On => Err(BackendError::Unsupported(
                "gemini takes a thinking level (minimal, low, high), not on".into(),
            )),
            Protocol::Gemini => Ok(()),
        }
    }

    async fn complete(&self, req: &ChatRequest) -> Result<String, BackendError> {
        let body = request_body(self.protocol, req);
        let builder = match self.protocol {
            Protocol::OpenAi(_) => self
                .client
                .post(format!("{}/chat/completions", self.base_url))
                .bearer_auth(&self.api_key),
            Protocol::Gemini => self
                .client
                .post(format!("{}/models/{}:generateContent", self.base_url, req.model_id))
                .header("x-goog-api-key", &self.api_key),
        };
        let resp = builder
            .json(&body)
            .send()
            .await
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let retry_after = resp
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .map(str::to_string);
        let text = resp
            .text()
            .await
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        if let Some(err) = status_error(status, retry_after.as_deref(), &text) {
            return Err(err);
        }
        let json: Value = serde_json::from_str(&text)
            .map_err(|e| BackendError::Protocol(format!("response is not JSON: {e}")))?;
        extract_text(self.protocol, &json)
    }
}

type Script = dyn Fn(&ChatRequest) -> Result<String, BackendError> + Send + Sync;
type Latency = dyn Fn(&ChatRequest) -> Duration + Send + Sync;

#[derive(Clone)]
pub enum MockPolicy {
    /// The same text for every prompt.
    Fixed(String),
    /// A label chosen by hashing the prompt.
    HashPick(Vec<String>),
    Script(Arc<Script>),
}

/// Offline backend that counts calls and the peak number in flight.
pub struct MockBackend {
    policy: MockPolicy,
    latency: Arc<Latency>,
    calls: AtomicUsize,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
}

impl MockBackend {
    pub fn new(policy: MockPolicy) -> Self {
        MockBackend {
            policy,
            latency: Arc::new(|_| Duration::ZERO),
            calls: AtomicUsize::new(0),
            in_flight: AtomicUsize::new(0),
            max_in_flight: AtomicUsize::new(0),
        }
    }

    pub fn fixed(text: impl Into<String>) -> Self {
        Self::new(MockPolicy::Fixed(text.into()))
    }

    pub fn hash_pick<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Self {
        Self::new(MockPolicy::HashPick(labels.into_iter().map(Into::into).collect()))
    }

    pub fn script(f: impl Fn(&ChatRequest) -> Result<String, BackendError> + Send + Sync + 'static) -> Self {
        Self::new(MockPolicy::Script(Arc::new(f)))
    }

    pub fn with_latency(mut self, f: impl Fn(&ChatRequest) -> Duration + Send + Sync + 'static) -> Self {
        self.latency = Arc::new(f);
        self
    }

    pub fn with_fixed_latency(self, d: Duration) -> Self {
        self.with_latency(move |_| d)
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight.load(Ordering::SeqCst)
    }

    pub fn reset_counters(&self) {
        self.calls.store(0, Ordering::SeqCst);
        self.max_in_flight.store(0, Ordering::SeqCst);
    }
}

struct InFlight<'a>(&'a AtomicUsize);

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

#[async_trait]
impl ChatBackend for MockBackend {
    fn id(&self) -> &str {
        "mock"
    }

    fn check_reasoning(&self, _level: ReasoningLevel) -> Result<(), BackendError> {
        Ok(())
    }

    async fn complete(&self, req: &ChatRequest) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        let _guard = InFlight(&self.in_flight);
        self.max_in_flight.fetch_max(now, Ordering::SeqCst);

        let delay = (self.latency)(req);
        if !delay.is_zero() {
            tokio::time::sleep(delay).await;
        }
        match &self.policy {
            MockPolicy::Fixed(text) => Ok(text.clone()),
            MockPolicy::HashPick(labels) if labels.is_empty() => {
                Err(BackendError::Protocol("mock has no labels".into()))
            }
            MockPolicy::HashPick(labels) => {
                let digest = digest_fields(&[&req.prompt]);
                let x = u64::from_str_radix(&digest[..16], 16).expect("hex digest");
                Ok(labels[(x % labels.len() as u64) as usize].clone())
            }
            MockPolicy::Script(f) => f(req),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(level: ReasoningLevel) -> ChatRequest {
        ChatRequest {
            model_id: "m".into(),
            prompt: "p".into(),
            temperature: 0.0,
            reasoning_level: level,
        }
    }

    #[test]
    fn openai_effort_body() {
        let p = Protocol::OpenAi(ReasoningStyle::Effort);
        let off = request_body(p, &req(ReasoningLevel::Off));
        assert!(off.get("reasoning_effort").is_none());
        assert_eq!(off["messages"][0]["content"], "p");
        assert_eq!(off["temperature"], 0.0);
        let high = request_body(p, &req(ReasoningLevel::High));
        assert_eq!(high["reasoning_effort"], "high");
    }

    #[test]
    fn qwen_toggle_body() {
        let p = Protocol::OpenAi(ReasoningStyle::Toggle);
        assert_eq!(request_body(p, &req(ReasoningLevel::Off))["enable_thinking"], false);
        assert_eq!(request_body(p, &req(ReasoningLevel::On))["enable_thinking"], true);
        assert!(ReasoningStyle::Toggle.check("qwen", ReasoningLevel::Low).is_err());
    }

    #[test]
    fn gemini_body_and_text() {
        let b = request_body(Protocol::Gemini, &req(ReasoningLevel::Minimal));
        assert_eq!(b["generationConfig"]["thinkingConfig"]["thinkingLevel"], "minimal");
        let b = request_body(Protocol::Gemini, &req(ReasoningLevel::Off));
        assert!(b["generationConfig"].get("thinkingConfig").is_none());
        let resp = json!({"candidates": [{"content": {"parts": [
            {"text": "thinking...", "thought": true},
            {"text": "Hispanic"}
        ]}}]});
        assert_eq!(extract_text(Protocol::Gemini, &resp).unwrap(), "Hispanic");
    }

    #[test]
    fn openai_text_and_missing() {
        let p = Protocol::OpenAi(ReasoningStyle::Effort);
        let ok = json!({"choices": [{"message": {"content": "Black"}}]});
        assert_eq!(extract_text(p, &ok).unwrap(), "Black");
        assert!(matches!(extract_text(p, &json!({"choices": []})), Err(BackendError::Protocol(_))));
    }

    #[test]
    fn unsupported_levels_are_errors() {
        assert!(ReasoningStyle::Effort.check("openai", ReasoningLevel::On).is_err());
        assert!(ReasoningStyle::Fixed.check("deepseek", ReasoningLevel::High).is_err());
        assert!(ReasoningStyle::Fixed.check("deepseek", ReasoningLevel::Off).is_ok());
    }

    #[test]
    fn status_mapping() {
        assert_eq!(status_error(200, None, ""), None);
        assert!(matches!(status_error(401, None, ""), Some(BackendError::Auth(_))));
        assert_eq!(
            status_error(429, Some("2"), ""),
            Some(BackendError::RateLimited { retry_after: Some(Duration::from_secs(2)) })
        );
        assert!(status_error(503, None, "").unwrap().is_retryable());
        assert!(!status_error(400, None, "").unwrap().is_retryable());
    }

    #[test]
    fn key_variable_names() {
        assert_eq!(api_key_var("gemini"), "ETHNO_API_KEY_GEMINI");
        assert_eq!(api_key_var("open-router"), "ETHNO_API_KEY_OPEN_ROUTER");
        assert_eq!(base_url_var("qwen"), "ETHNO_BASE_URL_QWEN");
    }

    #[test]
    fn unknown_backend() {
        assert!(matches!(create_backend("nope", "k".into(), None), Err(BackendError::Unsupported(_))));
    }

    #[tokio::test]
    async fn hash_pick_is_deterministic() {
        let m = MockBackend::hash_pick(["A", "B", "C"]);
        let a = m.complete(&req(ReasoningLevel::Off)).await.unwrap();
        let b = m.complete(&req(ReasoningLevel::Off)).await.unwrap();
        assert_eq!(a, b);
        assert_eq!(m.calls(), 2);
        assert_eq!(m.max_in_flight(), 1);
    }
}
