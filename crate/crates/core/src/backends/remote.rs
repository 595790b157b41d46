//! Chat-completion HTTP client for summarization, decoding and scoring.
//!
//! Every call is a POST of `{model, messages, temperature, ...}` and every
//! generated answer must be a JSON object `{"sentence": "..."}` with nothing
//! around it. Transport failures, rate limits, server errors and malformed
//! answers are retried with exponential backoff inside a total time budget.
//!
//! Scoring sends the reference text as a prefilled assistant turn with
//! `echo`, `logprobs` and `max_tokens: 0`, and reads per-token log
//! probabilities from `choices[0].logprobs.content[].logprob`. Embeddings
//! travel in the user message as
//! `<embedding aspect=".." dim=".." encoding="f32le-base64">...</embedding>`.
//! Both conventions are this crate's own; the server must understand them.

use std::sync::atomic::{AtomicU8, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{filter_refusals, Decoded, DecoderBackend, PromptTemplates, SummarizerBackend};
use crate::error::{Error, Result};
use crate::geometry::{AspectId, EmbeddingVector};

/// Raw HTTP exchange: status code and body text, or a transport message.
pub trait ChatTransport: Send + Sync {
    fn post(&self, body: &Value, timeout: Duration) -> std::result::Result<(u16, String), String>;
}

/// [`ChatTransport`] over blocking HTTP with bearer-token auth.
pub struct HttpTransport {
    agent: ureq::Agent,
    url: String,
    api_key: Option<String>,
}

impl HttpTransport {
    pub fn new(url: impl Into<String>, api_key: Option<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
        HttpTransport { agent, url: url.into(), api_key }
    }
}

impl ChatTransport for HttpTransport {
    fn post(&self, body: &Value, timeout: Duration) -> std::result::Result<(u16, String), String> {
        let mut req = self.agent.post(&self.url).config().timeout_global(Some(timeout)).build();
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| e.to_string())?;
        Ok((status, text))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub temperature: f64,
    pub max_attempts: usize,
    pub initial_backoff_ms: u64,
    /// Upper bound on the wall time of one logical call, retries included.
    pub total_timeout_secs: f64,
    /// Requests in flight at once for multi-sample calls.
    pub parallelism: usize,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "default".into(),
            api_key_env: "ATLAS_API_KEY".into(),
            temperature: 1.0,
            max_attempts: 3,
            initial_backoff_ms: 500,
            total_timeout_secs: 60.0,
            parallelism: 4,
        }
    }
}

const SCORING_UNKNOWN: u8 = 0;
const SCORING_YES: u8 = 1;
const SCORING_NO: u8 = 2;

pub struct RemoteChatClient {
    transport: Arc<dyn ChatTransport>,
    cfg: RemoteConfig,
    templates: PromptTemplates,
    scoring: AtomicU8,
}

enum Failure {
    Retry(Error),
    Fatal(Error),
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

/// The assistant message text of a chat-completion response.
fn message_content(body: &str) -> std::result::Result<String, Error> {
    let malformed = |reason: &str| Error::MalformedResponse { reason: reason.into(), body: body.to_string() };
    let v: Value = serde_json::from_str(body).map_err(|e| malformed(&format!("response is not JSON: {e}")))?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| malformed("missing choices[0].message.content"))
}

/// Strict `{"sentence": "..."}` extraction.
pub fn parse_sentence(body: &str) -> Result<String> {
    let content = message_content(body)?;
    let malformed = |reason: &str| Error::MalformedResponse { reason: reason.into(), body: body.to_string() };
    let v: Value = serde_json::from_str(content.trim()).map_err(|_| malformed("answer is not a bare JSON object"))?;
    let obj = v.as_object().ok_or_else(|| malformed("answer is not a JSON object"))?;
    if obj.len() != 1 {
        return Err(malformed("answer must have exactly one key"));
    }
    obj.get("sentence").and_then(Value::as_str).map(str::to_string).ok_or_else(|| malformed("missing string key \"sentence\""))
}

/// Mean token log-probability from `choices[0].logprobs.content`.
fn parse_logprobs(body: &str) -> Result<Vec<f64>> {
    let v: Value = serde_json::from_str(body)
        .map_err(|e| Error::MalformedResponse { reason: format!("response is not JSON: {e}"), body: body.into() })?;
    let content = v
        .pointer("/choices/0/logprobs/content")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Capability("endpoint returned no token log-probabilities".into()))?;
    content
        .iter()
        .map(|t| {
            t.get("logprob").and_then(Value::as_f64).ok_or_else(|| Error::MalformedResponse {
                reason: "token entry without numeric logprob".into(),
                body: body.into(),
            })
        })
        .collect()
}

/// Conditioning block carrying an embedding as little-endian f32, base64.
pub fn conditioning_block(embedding: &EmbeddingVector, aspect: &AspectId) -> String {
    let bytes: Vec<u8> = embedding.as_slice().iter().flat_map(|x| (*x as f32).to_le_bytes()).collect();
    format!(
        "<embedding aspect=\"{}\" dim=\"{}\" encoding=\"f32le-base64\">{}</embedding>",
        aspect,
        embedding.dim(),
        base64::engine::general_purpose::STANDARD.encode(bytes)
    )
}

impl RemoteChatClient {
    pub fn new(transport: Arc<dyn ChatTransport>, cfg: RemoteConfig, templates: PromptTemplates) -> Self {
        RemoteChatClient { transport, cfg, templates, scoring: AtomicU8::new(SCORING_UNKNOWN) }
    }

    /// Client over HTTP, reading the bearer token from `cfg.api_key_env`.
    pub fn http(cfg: RemoteConfig, templates: PromptTemplates) -> Self {
        let key = std::env::var(&cfg.api_key_env).ok().filter(|k| !k.is_empty());
        let transport = Arc::new(HttpTransport::new(cfg.endpoint.clone(), key));
        RemoteChatClient::new(transport, cfg, templates)
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.cfg
    }

    fn request_body(&self, messages: Vec<Value>, extra: &[(&str, Value)]) -> Value {
        let mut body = json!({
            "model": self.cfg.model,
            "messages": messages,
            "temperature": self.cfg.temperature,
        });
        for (k, v) in extra {
            body[*k] = v.clone();
        }
        body
    }

    /// Sends `body`, retrying until `parse` accepts a response or the attempt
    /// count or time budget runs out.
    fn call<T>(&self, body: &Value, parse: impl Fn(&str) -> Result<T>) -> Result<T> {
        let deadline = Instant::now() + Duration::from_secs_f64(self.cfg.total_timeout_secs.max(0.0));
        let attempts = self.cfg.max_attempts.max(1);
        let mut last = Error::Transport { attempts: 0, message: "time budget exhausted before first attempt".into() };
        tracing::debug!(body = %truncate(&body.to_string(), 2000), "chat request");
        for attempt in 1..=attempts {
            let remaining = deadline.saturating_duration_since(Instant::now());
            if remaining.is_zero() {
                break;
            }
            let outcome = match self.transport.post(body, remaining) {
                Err(message) => Failure::Retry(Error::Transport { attempts: attempt, message }),
                Ok((status, text)) => {
                    tracing::debug!(status, body = %truncate(&text, 2000), "chat response");
                    match status {
                        200..=299 => match parse(&text) {
                            Ok(v) => return Ok(v),
                            Err(e @ Error::MalformedResponse { .. }) => Failure::Retry(e),
                            Err(e) => Failure::Fatal(e),
                        },
                        429 | 500..=599 => Failure::Retry(Error::Transport {
                            attempts: attempt,
                            message: format!("HTTP {status}: {}", truncate(&text, 500)),
                        }),
                        _ => Failure::Fatal(Error::Transport {
                            attempts: attempt,
                            message: format!("HTTP {status}: {}", truncate(&text, 500)),
                        }),
                    }
                }
            };
            match outcome {
                Failure::Fatal(e) => return Err(e),
                Failure::Retry(e) => last = e,
            }
            if attempt < attempts {
                let backoff = Duration::from_millis(self.cfg.initial_backoff_ms.saturating_mul(1 << (attempt - 1)));
                let wait = backoff.min(deadline.saturating_duration_since(Instant::now()));
                tracing::warn!(attempt, ?wait, error = %last, "chat request failed; backing off");
                thread::sleep(wait);
            }
        }
        Err(match last {
            Error::Transport { message, .. } => Error::Transport { attempts, message },
            other => other,
        })
    }

    fn sentence(&self, user: String, system: Option<String>) -> Result<String> {
        let mut messages = Vec::new();
        if let Some(s) = system {
            messages.push(json!({"role": "system", "content": s}));
        }
        messages.push(json!({"role": "user", "content": user}));
        let body = self.request_body(messages, &[("response_format", json!({"type": "json_object"}))]);
        self.call(&body, parse_sentence)
    }

    /// `n` independent summary requests, at most `parallelism` in flight;
    /// refusals are removed from the result.
    pub fn remote_summarize(&self, abstract_text: &str, aspect: &AspectId, n: usize) -> Result<Vec<String>> {
        let (system, user) = self.templates.summarize(aspect, abstract_text);
        let mut out = Vec::with_capacity(n);
        for chunk in (0..n).collect::<Vec<_>>().chunks(self.cfg.parallelism.max(1)) {
            let results: Vec<Result<String>> = thread::scope(|s| {
                let handles: Vec<_> = chunk
                    .iter()
                    .map(|_| s.spawn(|| self.sentence(user.clone(), Some(system.clone()))))
                    .collect();
                handles.into_iter().map(|h| h.join().expect("request thread panicked")).collect()
            });
            for r in results {
                out.push(r?);
            }
        }
        Ok(filter_refusals(out))
    }

    /// Perplexity of `reference` under the embedding-conditioned prompt.
    pub fn remote_score(&self, embedding: Option<&EmbeddingVector>, aspect: &AspectId, reference: &str) -> Result<f64> {
        if self.scoring.load(Ordering::Relaxed) == SCORING_NO {
            return Err(Error::Capability("endpoint does not return token log-probabilities".into()));
        }
        let block = embedding.map(|e| conditioning_block(e, aspect)).unwrap_or_default();
        let messages = vec![
            json!({"role": "user", "content": self.templates.score(aspect, &block)}),
            json!({"role": "assistant", "content": reference}),
        ];
        let body = self.request_body(
            messages,
            &[("logprobs", json!(true)), ("echo", json!(true)), ("max_tokens", json!(0))],
        );
        let logprobs = self.call(&body, parse_logprobs)?;
        if logprobs.is_empty() {
            return Err(Error::MalformedResponse { reason: "no scored tokens".into(), body: String::new() });
        }
        Ok((-logprobs.iter().sum::<f64>() / logprobs.len() as f64).exp())
    }

    /// Asks the endpoint to score a short text and records whether token
    /// log-probabilities came back. Transport failures propagate.
    pub fn probe_scoring(&self) -> Result<bool> {
        self.scoring.store(SCORING_UNKNOWN, Ordering::Relaxed);
        let ok = match self.remote_score(None, &AspectId::from("probe"), "probe") {
            Ok(_) => true,
            Err(Error::Capability(_)) => false,
            Err(e) => return Err(e),
        };
        self.scoring.store(if ok { SCORING_YES } else { SCORING_NO }, Ordering::Relaxed);
        Ok(ok)
    }
}

impl SummarizerBackend for RemoteChatClient {
    fn identity(&self) -> String {
        format!("remote:{}@{}", self.cfg.model, self.cfg.endpoint)
    }

    fn summarize(&self, abstract_text: &str, aspect: &AspectId, n: usize) -> Result<Vec<String>> {
        self.remote_summarize(abstract_text, aspect, n)
    }
}

impl DecoderBackend for RemoteChatClient {
    fn identity(&self) -> String {
        format!("remote:{}@{}", self.cfg.model, self.cfg.endpoint)
    }

    fn decode(&self, embedding: &EmbeddingVector, aspect: &AspectId) -> Result<Decoded> {
        let user = self.templates.decode(aspect, &conditioning_block(embedding, aspect));
        let text = self.sentence(user, None)?;
        Ok(Decoded { text, source_doc: None, confidence: f64::NAN, low_confidence: false })
    }

    fn supports_scoring(&self) -> bool {
        self.scoring.load(Ordering::Relaxed) == SCORING_YES
    }

    fn score(&self, embedding: Option<&EmbeddingVector>, aspect: &AspectId, reference: &str) -> Result<f64> {
        self.remote_score(embedding, aspect, reference)
    }
}
