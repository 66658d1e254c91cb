use std::time::{Duration, SystemTime, UNIX_EPOCH};

use futures::stream::{self, StreamExt};
use serde::Serialize;

use super::backend::{BackendError, ChatBackend, ChatRequest};
use super::cache::{CacheEntry, CacheRequest, ReasoningLevel, ResponseCache};
use super::parse::parse_response;
use super::prompt::{build_prompt, PromptConfig, PromptError, TemplateRegistry};
use crate::prediction::{Engine, Prediction};
use crate::records::RecordSet;
use crate::rng::SampleRng;

#[derive(Debug, Clone, PartialEq)]
pub struct BackendConfig {
    pub backend_id: String,
    pub model_id: String,
    pub temperature: f64,
    pub reasoning_level: ReasoningLevel,
    pub max_retries: u32,
    pub concurrency_limit: usize,
    pub timeout: Duration,
    /// First retry waits about this long; each further retry doubles it.
    pub backoff_base: Duration,
}

impl BackendConfig {
    pub fn new(backend_id: impl Into<String>, model_id: impl Into<String>) -> Self {
        BackendConfig {
            backend_id: backend_id.into(),
            model_id: model_id.into(),
            temperature: 0.0,
            reasoning_level: ReasoningLevel::Off,
            max_retries: 3,
            concurrency_limit: 8,
            timeout: Duration::from_secs(60),
            backoff_base: Duration::from_millis(500),
        }
    }

    pub fn validate(&self) -> Result<(), BatchError> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(BatchError::Config(format!(
                "temperature must be a finite number >= 0, got {}",
                self.temperature
            )));
        }
        if self.concurrency_limit == 0 {
            return Err(BatchError::Config("concurrency limit must be at least 1".into()));
        }
        if self.timeout.is_zero() {
            return Err(BatchError::Config("timeout must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct UsageReport {
    pub records: u64,
    /// Backend invocations, retries included.
    pub calls: u64,
    pub cache_hits: u64,
    pub retries: u64,
    pub unparseable: u64,
    /// Records whose request failed after all retries.
    pub errors: u64,
}

#[derive(Debug, Clone)]
pub struct BatchOutput {
    /// One per record, in input order.
    pub predictions: Vec<Prediction>,
    pub usage: UsageReport,
    /// Non-fatal problems such as cache write failures.
    pub warnings: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum BatchError {
    #[error("invalid backend configuration: {0}")]
    Config(String),
    #[error("backend {backend:?}: {source}")]
    Backend { backend: String, source: BackendError },
    #[error("authentication with backend {backend:?} failed: {message}")]
    Auth { backend: String, message: String },
    #[error("{} record(s) cannot be prompted; first: {}", .0.len(), .0[0].1)]
    Prompt(Vec<(String, PromptError)>),
}

struct Job {
    index: usize,
    request: CacheRequest,
    key: String,
}

struct Outcome {
    index: usize,
    result: Result<String, BackendError>,
    calls: u64,
}

fn jitter(key: &str, attempt: u32) -> f64 {
    let seed = u64::from_str_radix(&key[..16.min(key.len())], 16).unwrap_or(0);
    SampleRng::new(seed ^ u64::from(attempt).wrapping_mul(0x9e37_79b9_7f4a_7c15)).unit_f64()
}

/// Delay before retry number `attempt` (1-based): `base * 2^(attempt-1)`
/// scaled by a jitter factor in [1, 1.5) derived from the cache key.
pub fn backoff_delay(base: Duration, attempt: u32, key: &str) -> Duration {
    let exp = base.saturating_mul(1u32 << (attempt - 1).min(16));
    exp.mul_f64(1.0 + 0.5 * jitter(key, attempt))
}

async fn call_with_retries(
    backend: &dyn ChatBackend,
    cfg: &BackendConfig,
    job: &Job,
) -> Outcome {
    let req = ChatRequest {
        model_id: job.request.model_id.clone(),
        prompt: job.request.prompt.clone(),
        temperature: job.request.temperature,
        reasoning_level: job.request.reasoning_level,
    };
    let mut calls = 0;
    loop {
        calls += 1;
        let result = match tokio::time::timeout(cfg.timeout, backend.complete(&req)).await {
            Ok(r) => r,
            Err(_) => Err(BackendError::Timeout),
        };
        let retry = calls <= u64::from(cfg.max_retries);
        match result {
            Err(e) if e.is_retryable() && retry => {
                let mut delay = backoff_delay(cfg.backoff_base, calls as u32, &job.key);
                if let BackendError::RateLimited { retry_after: Some(after) } = e {
                    delay = delay.max(after);
                }
                tokio::time::sleep(delay).await;
            }
            result => {
                return Outcome {
                    index: job.index,
                    result,
                    calls,
                }
            }
        }
    }
}

fn now_secs() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Classifies every record through `backend`, consulting `cache` first.
///
/// Prompts are built for all records before any request is sent. The first
/// uncached request runs alone so an authentication failure aborts the
/// batch before anything else goes out; the rest run with at most
/// `concurrency_limit` in flight. A record whose request still fails after
/// retries gets an UNPARSEABLE prediction with the error attached.
pub async fn classify_batch(
    records: &RecordSet,
    pcfg: &PromptConfig,
    registry: &TemplateRegistry,
    bcfg: &BackendConfig,
    backend: &dyn ChatBackend,
    cache: &dyn ResponseCache,
) -> Result<BatchOutput, BatchError> {
    bcfg.validate()?;
    if pcfg.scheme.labels() != records.scheme().labels() {
        return Err(BatchError::Config(format!(
            "prompt scheme {:?} differs from the records' scheme {:?}",
            pcfg.scheme.name(),
            records.scheme().name()
        )));
    }
    backend
        .check_reasoning(bcfg.reasoning_level)
        .map_err(|source| BatchError::Backend {
            backend: backend.id().to_string(),
            source,
        })?;

    let mut jobs = Vec::with_capacity(records.len());
    let mut failures = Vec::new();
    for (index, record) in records.iter().enumerate() {
        match build_prompt(record, pcfg, registry) {
            Ok(prompt) => {
                let request = CacheRequest {
                    model_id: bcfg.model_id.clone(),
                    template_id: pcfg.template_id.clone(),
                    prompt,
                    temperature: bcfg.temperature,
                    reasoning_level: bcfg.reasoning_level,
                };
                let key = request.key();
                jobs.push(Job { index, request, key });
            }
            Err(e) => failures.push((record.id.clone(), e)),
        }
    }
    if !failures.is_empty() {
        return Err(BatchError::Prompt(failures));
    }

    let mut usage = UsageReport {
        records: records.len() as u64,
        ..Default::default()
    };
    let mut warnings = Vec::new();
    let mut raw: Vec<Option<(String, bool, Option<String>)>> = vec![None; jobs.len()];
    let mut pending = Vec::new();
    for job in &jobs {
        match cache.get(&job.key) {
            Ok(Some(entry)) => {
                usage.cache_hits += 1;
                raw[job.index] = Some((entry.raw_response, true, None));
            }
            Ok(None) => pending.push(job),
            Err(e) => {
                warnings.push(format!("cache read failed, treating as miss: {e}"));
                pending.push(job);
            }
        }
    }

    let mut outcomes = Vec::with_capacity(pending.len());
    if let Some((first, rest)) = pending.split_first() {
        let outcome = call_with_retries(backend, bcfg, first).await;
        if let Err(BackendError::Auth(message)) = &outcome.result {
            return Err(BatchError::Auth {
                backend: backend.id().to_string(),
                message: message.clone(),
            });
        }
        outcomes.push(outcome);
        let rest: Vec<Outcome> = stream::iter(rest)
            .map(|job| call_with_retries(backend, bcfg, job))
            .buffer_unordered(bcfg.concurrency_limit)
            .collect()
            .await;
        outcomes.extend(rest);
    }

    for outcome in outcomes {
        usage.calls += outcome.calls;
        usage.retries += outcome.calls - 1;
        let job = &jobs[outcome.index];
        raw[outcome.index] = Some(match outcome.result {
            Ok(text) => {
                let entry = CacheEntry {
                    request: job.request.clone(),
                    raw_response: text.clone(),
                    timestamp: now_secs(),
                };
                if let Err(e) = cache.put(&job.key, &entry) {
                    warnings.push(format!("cache write failed: {e}"));
                }
                (text, false, None)
            }
            Err(e) => {
                usage.errors += 1;
                let note = format!("{e} (after {} attempt(s))", outcome.calls);
                (String::new(), false, Some(note))
            }
        });
    }

    let predictions: Vec<Prediction> = jobs
        .iter()
        .zip(raw)
        .map(|(job, slot)| {
            let (raw_response, cached, error) = slot.expect("every job resolved");
            let label = if error.is_some() {
                crate::prediction::PredictedLabel::Unparseable
            } else {
                parse_response(&raw_response, &pcfg.scheme)
            };
            if label.is_unparseable() {
                usage.unparseable += 1;
            }
            Prediction {
                id: records.records()[job.index].id.clone(),
                label,
                raw_response,
                engine: Engine::Llm,
                model_id: bcfg.model_id.clone(),
                prompt_hash: job.key.clone(),
                cached,
                probs: None,
                error,
            }
        })
        .collect();

    Ok(BatchOutput {
        predictions,
        usage,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::backend::MockBackend;
    use crate::llm::MemoryCache;
    use crate::records::{CategoryScheme, NameRecord};
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;
    use std::time::Instant;

    fn scheme() -> Arc<CategoryScheme> {
        Arc::new(CategoryScheme::from_labels("us4", ["White", "Black", "Hispanic", "Asian"]).unwrap())
    }

    fn records(n: usize) -> RecordSet {
        let recs = (0..n)
            .map(|i| NameRecord {
                id: format!("id{i:03}"),
                given_names: "Maria".into(),
                surname: format!("Lopez{i}"),
                geography: [("county".to_string(), "Miami-Dade County".to_string())].into(),
                ..Default::default()
            })
            .collect();
        RecordSet::new(recs, scheme(), "test").unwrap()
    }

    fn cfg(limit: usize) -> BackendConfig {
        BackendConfig {
            concurrency_limit: limit,
            backoff_base: Duration::from_millis(1),
            ..BackendConfig::new("mock", "mock-1")
        }
    }

    async fn run(
        set: &RecordSet,
        bcfg: &BackendConfig,
        backend: &dyn ChatBackend,
        cache: &dyn ResponseCache,
    ) -> Result<BatchOutput, BatchError> {
        let pcfg = PromptConfig::new(set.scheme().clone(), "county");
        classify_batch(set, &pcfg, &TemplateRegistry::builtin(), bcfg, backend, cache).await
    }

    #[tokio::test]
    async fn empty_set() {
        let mock = MockBackend::fixed("White");
        let out = run(&records(0), &cfg(4), &mock, &MemoryCache::new()).await.unwrap();
        assert!(out.predictions.is_empty());
        assert_eq!(mock.calls(), 0);
    }

    #[tokio::test]
    async fn echo_mock_keeps_order() {
        let set = records(50);
        let mock = MockBackend::fixed("Hispanic")
            .with_latency(|r| Duration::from_millis((r.prompt.len() as u64 * 7919) % 13));
        let out = run(&set, &cfg(8), &mock, &MemoryCache::new()).await.unwrap();
        let ids: Vec<_> = out.predictions.iter().map(|p| p.id.clone()).collect();
        let expected: Vec<_> = set.iter().map(|r| r.id.clone()).collect();
        assert_eq!(ids, expected);
        assert!(out.predictions.iter().all(|p| p.label.category() == Some("Hispanic")));
        assert!(mock.max_in_flight() <= 8);
        assert_eq!(out.usage.calls, 50);
    }

    #[tokio::test]
    async fn warm_cache_makes_no_calls() {
        let set = records(20);
        let cache = MemoryCache::new();
        let mock = MockBackend::hash_pick(["White", "Black", "Hispanic", "Asian"]);
        let cold = run(&set, &cfg(4), &mock, &cache).await.unwrap();
        mock.reset_counters();
        let warm = run(&set, &cfg(4), &mock, &cache).await.unwrap();
        assert_eq!(mock.calls(), 0);
        assert_eq!((warm.usage.calls, warm.usage.cache_hits), (0, 20));
        for (a, b) in cold.predictions.iter().zip(&warm.predictions) {
            assert_eq!((&a.label, &a.raw_response, &a.prompt_hash), (&b.label, &b.raw_response, &b.prompt_hash));
            assert!(!a.cached && b.cached);
        }
    }

    #[tokio::test]
    async fn retries_then_succeeds() {
        let attempts = Arc::new(AtomicUsize::new(0));
        let a = attempts.clone();
        let mock = MockBackend::script(move |_| {
            if a.fetch_add(1, Ordering::SeqCst) < 2 {
                Err(BackendError::Transport("reset".into()))
            } else {
                Ok("Asian".into())
            }
        });
        let out = run(&records(1), &cfg(1), &mock, &MemoryCache::new()).await.unwrap();
        assert_eq!(out.predictions[0].label.category(), Some("Asian"));
        assert_eq!((out.usage.calls, out.usage.retries), (3, 2));
    }

    #[tokio::test]
    async fn exhausted_retries_annotate() {
        let mock = MockBackend::script(|r| {
            if r.prompt.contains("Lopez1.") {
                Err(BackendError::RateLimited { retry_after: None })
            } else {
                Ok("White".into())
            }
        });
        let bcfg = BackendConfig { max_retries: 2, ..cfg(2) };
        let cache = MemoryCache::new();
        let out = run(&records(3), &bcfg, &mock, &cache).await.unwrap();
        let p = &out.predictions[1];
        assert!(p.label.is_unparseable());
        assert!(p.error.as_deref().unwrap().contains("3 attempt"));
        assert_eq!(out.usage.errors, 1);
        assert_eq!(out.usage.unparseable, 1);
        // failed requests are not cached
        assert_eq!(cache.len(), 2);
    }

    #[tokio::test]
    async fn malformed_answer_is_not_retried() {
        let mock = MockBackend::fixed("I cannot determine that.");
        let out = run(&records(2), &cfg(2), &mock, &MemoryCache::new()).await.unwrap();
        assert_eq!(mock.calls(), 2);
        assert_eq!(out.usage.unparseable, 2);
        assert!(out.predictions.iter().all(|p| p.error.is_none()));
    }

    #[tokio::test]
    async fn auth_failure_is_fatal_after_one_request() {
        let mock = MockBackend::script(|_| Err(BackendError::Auth("bad key".into())));
        let err = run(&records(10), &cfg(4), &mock, &MemoryCache::new()).await.unwrap_err();
        assert!(matches!(err, BatchError::Auth { .. }));
        assert_eq!(mock.calls(), 1);
    }

    #[tokio::test]
    async fn timeout_counts_as_transport() {
        let mock = MockBackend::fixed("White").with_fixed_latency(Duration::from_millis(200));
        let bcfg = BackendConfig {
            timeout: Duration::from_millis(20),
            max_retries: 1,
            ..cfg(1)
        };
        let out = run(&records(1), &bcfg, &mock, &MemoryCache::new()).await.unwrap();
        assert_eq!(mock.calls(), 2);
        assert!(out.predictions[0].error.as_deref().unwrap().contains("timed out"));
    }

    #[tokio::test]
    async fn throughput_bound() {
        let (n, c, t) = (40usize, 8usize, Duration::from_millis(50));
        let mock = MockBackend::fixed("Black").with_fixed_latency(t);
        let start = Instant::now();
        run(&records(n), &cfg(c), &mock, &MemoryCache::new()).await.unwrap();
        let bound = t.mul_f64((n.div_ceil(c) + 1) as f64 * 1.5);
        assert!(start.elapsed() <= bound, "{:?} > {:?}", start.elapsed(), bound);
        assert_eq!(mock.max_in_flight(), c);
    }

    #[tokio::test]
    async fn config_and_prompt_errors_come_first() {
        let mock = MockBackend::fixed("White");
        let bad = BackendConfig { concurrency_limit: 0, ..cfg(1) };
        assert!(matches!(run(&records(2), &bad, &mock, &MemoryCache::new()).await, Err(BatchError::Config(_))));
        let bad = BackendConfig { temperature: -0.1, ..cfg(1) };
        assert!(matches!(run(&records(2), &bad, &mock, &MemoryCache::new()).await, Err(BatchError::Config(_))));

        let mut recs = records(3).into_records();
        recs[1].geography.clear();
        let set = RecordSet::new(recs, scheme(), "t").unwrap();
        let err = run(&set, &cfg(2), &mock, &MemoryCache::new()).await.unwrap_err();
        match err {
            BatchError::Prompt(f) => assert_eq!(f[0].0, "id001"),
            other => panic!("{other:?}"),
        }
        assert_eq!(mock.calls(), 0);
    }

    #[test]
    fn backoff_grows_with_bounded_jitter() {
        let base = Duration::from_millis(100);
        for attempt in 1..6 {
            let d = backoff_delay(base, attempt, "abcdef0123456789");
            let lo = base * (1 << (attempt - 1));
            assert!(d >= lo && d < lo.mul_f64(1.5));
        }
        assert_eq!(backoff_delay(base, 2, "ff"), backoff_delay(base, 2, "ff"));
    }
}
