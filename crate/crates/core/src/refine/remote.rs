use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{cache_key, Attempt, CacheEntry, RefineError, RefineRequest, RefinedPair, RefinementCache, Teacher, TeacherKind};
use crate::http::{JsonRequest, Transport, TransportError, UreqTransport};

/// System message sent with every refinement request.
pub const SYSTEM_PROMPT: &str = "You are an expert in Machine Translation and Cultural Localization. \
Refine a given machine-translated sentence by improving its quality and naturally localizing named \
entities into the target language only.

Guidelines
- Entity Localization: Translate or adapt all named entities into natural, target-language-only forms. \
Do not include the source language. Use official or culturally standard localized names.
- Style and Tone: Match the tone of the source (formal, neutral, conversational).
- Fluency: Ensure the result is natural, idiomatic, and fluid.
- Grammar and Accuracy: Fix any awkward grammar or inconsistent wording.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    /// Full chat-completions URL.
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub timeout_secs: f64,
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub max_concurrency: usize,
    /// Base delay of the exponential backoff between attempts.
    pub backoff_ms: u64,
    pub temperature: f64,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key_env: "OPENAI_API_KEY".into(),
            timeout_secs: 60.0,
            max_retries: 3,
            max_concurrency: 8,
            backoff_ms: 500,
            temperature: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), RefineError> {
        let bad = |m: &str| Err(RefineError::Config(m.into()));
        if self.endpoint.is_empty() {
            return bad("remote endpoint is empty");
        }
        if self.model.is_empty() {
            return bad("remote model is empty");
        }
        if self.api_key_env.is_empty() {
            return bad("API key variable name is empty");
        }
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return bad("timeout must be positive");
        }
        if self.max_concurrency == 0 {
            return bad("max concurrency must be at least 1");
        }
        Ok(())
    }
}

/// Chat-completions body for one `(source, draft)` pair.
pub fn build_request(config: &RemoteConfig, source: &[String], draft: &[String]) -> Value {
    json!({
        "model": config.model,
        "messages": [
            {"role": "system", "content": SYSTEM_PROMPT},
            {"role": "user", "content": format!("Source: {}\nTranslation: {}", source.join(" "), draft.join(" "))},
        ],
        "temperature": config.temperature,
    })
}

/// Extracts the refined token sequence and token usage from a response.
pub fn parse_response(resp: &Value) -> Result<(Vec<String>, Option<u64>, Option<u64>), String> {
    let content = resp
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| format!("response has no message content: {resp}"))?;
    let tokens: Vec<String> = content.split_whitespace().map(String::from).collect();
    if tokens.is_empty() {
        return Err("teacher returned an empty refinement".into());
    }
    let usage = |k: &str| resp.pointer(&format!("/usage/{k}")).and_then(Value::as_u64);
    Ok((tokens, usage("prompt_tokens"), usage("completion_tokens")))
}

/// Client for an OpenAI-compatible endpoint with retries, bounded
/// concurrency and an optional persistent cache.
pub struct RemoteTeacher {
    config: RemoteConfig,
    transport: Arc<dyn Transport>,
    cache: Option<Arc<RefinementCache>>,
}

impl RemoteTeacher {
    pub fn new(config: RemoteConfig, cache: Option<Arc<RefinementCache>>) -> Result<Self, RefineError> {
        Self::with_transport(config, cache, Arc::new(UreqTransport))
    }

    pub fn with_transport(
        config: RemoteConfig,
        cache: Option<Arc<RefinementCache>>,
        transport: Arc<dyn Transport>,
    ) -> Result<Self, RefineError> {
        config.validate()?;
        Ok(Self { config, transport, cache })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn key(&self, source: &str, draft: &str) -> String {
        cache_key(TeacherKind::Remote.name(), &self.config.model, source, draft)
    }

    /// One request with retries; failures carry every attempt.
    fn call(&self, source: &[String], draft: &[String]) -> Result<RefinedPair, Vec<Attempt>> {
        let mut attempts = Vec::new();
        let api_key = match std::env::var(&self.config.api_key_env) {
            Ok(k) => k,
            Err(_) => {
                attempts.push(Attempt {
                    attempt: 1,
                    elapsed_ms: 0,
                    error: format!("environment variable {} is not set", self.config.api_key_env),
                });
                return Err(attempts);
            }
        };
        let request = JsonRequest {
            url: self.config.endpoint.clone(),
            headers: vec![("Authorization".into(), format!("Bearer {api_key}"))],
            body: build_request(&self.config, source, draft),
            timeout: Duration::from_secs_f64(self.config.timeout_secs),
        };
        for attempt in 1..=self.config.max_retries + 1 {
            let start = Instant::now();
            let outcome = self
                .transport
                .post_json(&request)
                .and_then(|resp| parse_response(&resp).map_err(TransportError::Decode));
            let elapsed_ms = start.elapsed().as_millis() as u64;
            match outcome {
                Ok((refined, prompt_tokens, completion_tokens)) => {
                    return Ok(RefinedPair {
                        latency_ms: Some(elapsed_ms),
                        prompt_tokens,
                        completion_tokens,
                        ..RefinedPair::plain(refined, TeacherKind::Remote)
                    });
                }
                Err(e) => {
                    let retry = e.is_retryable();
                    log::debug!("remote refinement attempt {attempt} failed: {e}");
                    attempts.push(Attempt { attempt, elapsed_ms, error: e.to_string() });
                    if !retry {
                        break;
                    }
                    if attempt <= self.config.max_retries && self.config.backoff_ms > 0 {
                        std::thread::sleep(Duration::from_millis(self.config.backoff_ms << (attempt - 1).min(10)));
                    }
                }
            }
        }
        Err(attempts)
    }
}

impl Teacher for RemoteTeacher {
    fn kind(&self) -> TeacherKind {
        TeacherKind::Remote
    }

    fn refine(&self, source: &[String], draft: &[String]) -> Result<RefinedPair, RefineError> {
        let req = RefineRequest { source: source.to_vec(), draft: draft.to_vec() };
        self.refine_batch(std::slice::from_ref(&req)).pop().expect("one result per request")
    }

    /// Serves cache hits, deduplicates the misses by key, and sends them
    /// through at most `max_concurrency` worker threads.
    fn refine_batch(&self, pairs: &[RefineRequest]) -> Vec<Result<RefinedPair, RefineError>> {
        let keyed: Vec<(String, String, String)> = pairs
            .iter()
            .map(|p| {
                let (s, d) = (p.source.join(" "), p.draft.join(" "));
                (self.key(&s, &d), s, d)
            })
            .collect();

        let mut done: HashMap<String, Result<RefinedPair, Vec<Attempt>>> = HashMap::new();
        let mut pending: Vec<usize> = Vec::new();
        let mut seen = HashSet::new();
        for (i, (key, _, _)) in keyed.iter().enumerate() {
            if !seen.insert(key.as_str()) {
                continue;
            }
            match self.cache.as_ref().and_then(|c| c.get(key)) {
                Some(entry) => {
                    let refined: Vec<String> = entry.refined.split_whitespace().map(String::from).collect();
                    done.insert(key.clone(), Ok(RefinedPair { cached: true, ..RefinedPair::plain(refined, TeacherKind::Remote) }));
                }
                None => pending.push(i),
            }
        }

        if !pending.is_empty() {
            let results: Mutex<Vec<Option<Result<RefinedPair, Vec<Attempt>>>>> = Mutex::new(vec![None; pending.len()]);
            let next = AtomicUsize::new(0);
            let workers = self.config.max_concurrency.min(pending.len());
            std::thread::scope(|scope| {
                for _ in 0..workers {
                    scope.spawn(|| loop {
                        let slot = next.fetch_add(1, Ordering::SeqCst);
                        if slot >= pending.len() {
                            break;
                        }
                        let p = &pairs[pending[slot]];
                        let outcome = self.call(&p.source, &p.draft);
                        results.lock().expect("results lock")[slot] = Some(outcome);
                    });
                }
            });
            let results = results.into_inner().expect("results lock");
            for (slot, outcome) in results.into_iter().enumerate() {
                let (key, source, draft) = &keyed[pending[slot]];
                let outcome = outcome.expect("every pending request ran");
                if let (Ok(pair), Some(cache)) = (&outcome, &self.cache) {
                    let entry = CacheEntry {
                        key: key.clone(),
                        source: source.clone(),
                        draft: draft.clone(),
                        refined: pair.refined.join(" "),
                        model: self.config.model.clone(),
                        timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
                    };
                    if let Err(e) = cache.insert(entry) {
                        log::warn!("{e}");
                    }
                }
                done.insert(key.clone(), outcome);
            }
        }

        keyed
            .iter()
            .map(|(key, _, _)| match &done[key] {
                Ok(pair) => Ok(pair.clone()),
                Err(attempts) => Err(RefineError::Remote { attempts: attempts.clone() }),
            })
            .collect()
    }
}
