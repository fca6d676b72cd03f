//! Chat-completion client with retries and an on-disk response cache.

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const API_KEY_ENV: &str = "SMV_API_KEY";

#[derive(Debug, Clone, PartialEq)]
pub struct ChatEndpointConfig {
    /// Base URL such as `https://api.openai.com/v1`; `/chat/completions` is
    /// appended unless already present.
    pub base_url: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
    pub timeout: Duration,
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
    /// Requests in flight at once.
    pub concurrency: usize,
}

impl Default for ChatEndpointConfig {
    fn default() -> Self {
        ChatEndpointConfig {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-3.5-turbo".into(),
            temperature: 0.0,
            max_tokens: Some(256),
            timeout: Duration::from_secs(60),
            max_retries: 5,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
            concurrency: 4,
        }
    }
}

impl ChatEndpointConfig {
    pub fn url(&self) -> String {
        let base = self.base_url.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }

    /// Delay before retry number `attempt` (0-based): doubling, capped.
    pub fn backoff(&self, attempt: u32) -> Duration {
        self.base_delay
            .checked_mul(2u32.saturating_pow(attempt))
            .unwrap_or(self.max_delay)
            .min(self.max_delay)
    }

    /// Request body: one user message.
    pub fn request_body(&self, prompt: &str) -> Value {
        let mut body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.temperature,
        });
        if let Some(max) = self.max_tokens {
            body["max_tokens"] = json!(max);
        }
        body
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

/// Failures below the HTTP layer. Both kinds are retried.
#[derive(Debug, Clone, PartialEq)]
pub enum TransportError {
    Timeout(String),
    Connection(String),
}

impl std::fmt::Display for TransportError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TransportError::Timeout(m) => write!(f, "timeout: {m}"),
            TransportError::Connection(m) => write!(f, "connection: {m}"),
        }
    }
}

pub trait ChatTransport: Send + Sync {
    fn post_json(&self, url: &str, api_key: &str, body: &str) -> std::result::Result<HttpReply, TransportError>;
}

/// Blocking HTTP transport.
pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        UreqTransport { agent: config.into() }
    }
}

impl ChatTransport for UreqTransport {
    fn post_json(&self, url: &str, api_key: &str, body: &str) -> std::result::Result<HttpReply, TransportError> {
        let sent = self
            .agent
            .post(url)
            .header("Authorization", &format!("Bearer {api_key}"))
            .header("Content-Type", "application/json")
            .send(body);
        let mut response = match sent {
            Ok(r) => r,
            Err(ureq::Error::Timeout(t)) => return Err(TransportError::Timeout(t.to_string())),
            Err(e) => return Err(TransportError::Connection(e.to_string())),
        };
        let status = response.status().as_u16();
        let body = response
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError::Connection(e.to_string()))?;
        Ok(HttpReply { status, body })
    }
}

/// Responses stored as `<sha256(model, prompt)>.txt` under a directory.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(ResponseCache { dir })
    }

    pub fn key(model: &str, prompt: &str) -> String {
        let mut hasher = Sha256::new();
        hasher.update(model.as_bytes());
        hasher.update([0u8]);
        hasher.update(prompt.as_bytes());
        hex::encode(hasher.finalize())
    }

    fn path(&self, model: &str, prompt: &str) -> PathBuf {
        self.dir.join(format!("{}.txt", Self::key(model, prompt)))
    }

    pub fn get(&self, model: &str, prompt: &str) -> Option<String> {
        std::fs::read_to_string(self.path(model, prompt)).ok()
    }

    pub fn put(&self, model: &str, prompt: &str, text: &str) -> Result<()> {
        let path = self.path(model, prompt);
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        std::fs::write(&tmp, text)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }
}

pub struct ChatClient<T> {
    transport: T,
    config: ChatEndpointConfig,
    api_key: String,
    cache: Option<ResponseCache>,
    calls: AtomicUsize,
}

fn first_choice_text(body: &str) -> Result<String> {
    let value: Value = serde_json::from_str(body)?;
    value["choices"][0]["message"]["content"]
        .as_str()
        .or_else(|| value["choices"][0]["text"].as_str())
        .map(str::to_string)
        .ok_or_else(|| Error::Endpoint("response has no choices[0].message.content".into()))
}

impl<T: ChatTransport> ChatClient<T> {
    pub fn new(transport: T, config: ChatEndpointConfig, api_key: impl Into<String>) -> Self {
        ChatClient {
            transport,
            config,
            api_key: api_key.into(),
            cache: None,
            calls: AtomicUsize::new(0),
        }
    }

    /// Reads the API key from `SMV_API_KEY`.
    pub fn from_env(transport: T, config: ChatEndpointConfig) -> Result<Self> {
        let key = std::env::var(API_KEY_ENV)
            .map_err(|_| Error::InvalidConfig(format!("environment variable {API_KEY_ENV} is not set")))?;
        Ok(ChatClient::new(transport, config, key))
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn config(&self) -> &ChatEndpointConfig {
        &self.config
    }

    /// Number of requests sent over the transport so far.
    pub fn transport_calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    /// Sends `prompt` and returns the first choice's text.
    ///
    /// Timeouts, connection failures, 429 and 5xx replies are retried with
    /// exponential backoff; 401 and 403 fail immediately.
    pub fn complete(&self, record_id: &str, prompt: &str) -> Result<String> {
        let model = &self.config.model;
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get(model, prompt)) {
            log::debug!("record {record_id}: cache hit");
            return Ok(hit);
        }
        let url = self.config.url();
        let body = self.config.request_body(prompt).to_string();
        let mut attempt = 0;
        loop {
            log::info!("record {record_id}: request attempt {} to {url}", attempt + 1);
            self.calls.fetch_add(1, Ordering::Relaxed);
            let failure = match self.transport.post_json(&url, &self.api_key, &body) {
                Ok(reply) if (200..300).contains(&reply.status) => {
                    let text = first_choice_text(&reply.body)?;
                    log::info!("record {record_id}: received {} bytes", text.len());
                    log::debug!("record {record_id}: response {text:?}");
                    if let Some(cache) = &self.cache {
                        cache.put(model, prompt, &text)?;
                    }
                    return Ok(text);
                }
                Ok(reply) if matches!(reply.status, 401 | 403) => {
                    return Err(Error::Auth { status: reply.status })
                }
                Ok(reply) if reply.status == 429 || reply.status >= 500 => {
                    format!("HTTP {}", reply.status)
                }
                Ok(reply) => {
                    let excerpt: String = reply.body.chars().take(200).collect();
                    return Err(Error::Endpoint(format!("HTTP {}: {excerpt}", reply.status)));
                }
                Err(e) => e.to_string(),
            };
            if attempt >= self.config.max_retries {
                return Err(Error::Endpoint(format!(
                    "giving up after {} retries, last failure: {failure}",
                    self.config.max_retries
                )));
            }
            let delay = self.config.backoff(attempt);
            log::warn!("record {record_id}: {failure}, retrying in {delay:?}");
            std::thread::sleep(delay);
            attempt += 1;
        }
    }

    /// Completes `(record_id, prompt)` pairs with at most
    /// `config.concurrency` requests in flight. Results follow input order.
    pub fn complete_batch(&self, items: &[(String, String)]) -> Vec<Result<String>> {
        let slots: Vec<Mutex<Option<Result<String>>>> = items.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        let workers = self.config.concurrency.clamp(1, items.len().max(1));
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some((id, prompt)) = items.get(i) else { break };
                    let result = self.complete(id, prompt);
                    *slots[i].lock().expect("slot lock") = Some(result);
                });
            }
        });
        slots
            .into_iter()
            .map(|s| s.into_inner().expect("slot lock").expect("every slot is filled"))
            .collect()
    }
}

/// One request against a live endpoint, key taken from `SMV_API_KEY`.
pub fn request_verbalization(prompt: &str, endpoint: &ChatEndpointConfig) -> Result<String> {
    let client = ChatClient::from_env(UreqTransport::new(endpoint.timeout), endpoint.clone())?;
    client.complete("-", prompt)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Replies from a script, then repeats the last entry.
    struct Scripted {
        replies: Mutex<Vec<std::result::Result<HttpReply, TransportError>>>,
        seen: Mutex<Vec<String>>,
    }

    impl Scripted {
        fn new(replies: Vec<std::result::Result<HttpReply, TransportError>>) -> Self {
            Scripted {
                replies: Mutex::new(replies),
                seen: Mutex::new(Vec::new()),
            }
        }
    }

    impl ChatTransport for Scripted {
        fn post_json(&self, _url: &str, _key: &str, body: &str) -> std::result::Result<HttpReply, TransportError> {
            self.seen.lock().unwrap().push(body.to_string());
            let mut replies = self.replies.lock().unwrap();
            if replies.len() > 1 {
                replies.remove(0)
            } else {
                replies[0].clone()
            }
        }
    }

    fn ok(text: &str) -> std::result::Result<HttpReply, TransportError> {
        Ok(HttpReply {
            status: 200,
            body: json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string(),
        })
    }

    fn status(code: u16) -> std::result::Result<HttpReply, TransportError> {
        Ok(HttpReply {
            status: code,
            body: "{}".into(),
        })
    }

    fn fast() -> ChatEndpointConfig {
        ChatEndpointConfig {
            base_delay: Duration::from_millis(1),
            max_delay: Duration::from_millis(4),
            max_retries: 3,
            ..ChatEndpointConfig::default()
        }
    }

    #[test]
    fn returns_first_choice_text() {
        let client = ChatClient::new(Scripted::new(vec![ok("fixed answer")]), fast(), "k");
        assert_eq!(client.complete("r", "hi").unwrap(), "fixed answer");
        let sent: Value = serde_json::from_str(&client.transport.seen.lock().unwrap()[0]).unwrap();
        assert_eq!(sent["messages"][0]["content"], "hi");
        assert_eq!(sent["messages"].as_array().unwrap().len(), 1);
        assert_eq!(sent["temperature"], 0.0);
    }

    #[test]
    fn retries_rate_limits() {
        let client = ChatClient::new(Scripted::new(vec![status(429), status(429), ok("done")]), fast(), "k");
        assert_eq!(client.complete("r", "p").unwrap(), "done");
        assert_eq!(client.transport_calls(), 3);
    }

    #[test]
    fn retries_server_errors_and_timeouts_then_gives_up() {
        let script = vec![status(503), Err(TransportError::Timeout("slow".into())), status(500)];
        let client = ChatClient::new(Scripted::new(script), fast(), "k");
        assert!(matches!(client.complete("r", "p"), Err(Error::Endpoint(_))));
        assert_eq!(client.transport_calls(), 4);
    }

    #[test]
    fn auth_failures_are_not_retried() {
        for code in [401, 403] {
            let client = ChatClient::new(Scripted::new(vec![status(code)]), fast(), "bad");
            assert!(matches!(client.complete("r", "p"), Err(Error::Auth { status }) if status == code));
            assert_eq!(client.transport_calls(), 1);
        }
    }

    #[test]
    fn other_client_errors_fail_fast() {
        let client = ChatClient::new(Scripted::new(vec![status(400)]), fast(), "k");
        assert!(matches!(client.complete("r", "p"), Err(Error::Endpoint(_))));
        assert_eq!(client.transport_calls(), 1);
    }

    #[test]
    fn cache_avoids_repeat_calls() {
        let dir = tempfile::tempdir().unwrap();
        let client = ChatClient::new(Scripted::new(vec![ok("cached")]), fast(), "k")
            .with_cache(ResponseCache::new(dir.path()).unwrap());
        assert_eq!(client.complete("r", "same prompt").unwrap(), "cached");
        assert_eq!(client.complete("r", "same prompt").unwrap(), "cached");
        assert_eq!(client.transport_calls(), 1);
        assert_ne!(ResponseCache::key("m1", "p"), ResponseCache::key("m2", "p"));
    }

    #[test]
    fn batch_preserves_order() {
        struct Echo;
        impl ChatTransport for Echo {
            fn post_json(&self, _: &str, _: &str, body: &str) -> std::result::Result<HttpReply, TransportError> {
                let v: Value = serde_json::from_str(body).unwrap();
                let prompt = v["messages"][0]["content"].as_str().unwrap().to_string();
                std::thread::sleep(Duration::from_millis((prompt.len() % 5) as u64));
                Ok(HttpReply {
                    status: 200,
                    body: json!({"choices": [{"message": {"content": prompt}}]}).to_string(),
                })
            }
        }
        let items: Vec<(String, String)> = (0..23).map(|i| (i.to_string(), "x".repeat(i))).collect();
        let client = ChatClient::new(Echo, fast(), "k");
        let out = client.complete_batch(&items);
        for (i, r) in out.into_iter().enumerate() {
            assert_eq!(r.unwrap(), "x".repeat(i));
        }
    }

    #[test]
    fn url_and_backoff() {
        let mut cfg = fast();
        cfg.base_url = "http://h/v1/".into();
        assert_eq!(cfg.url(), "http://h/v1/chat/completions");
        cfg.base_url = "http://h/v1/chat/completions".into();
        assert_eq!(cfg.url(), "http://h/v1/chat/completions");
        assert_eq!(cfg.backoff(0), Duration::from_millis(1));
        assert_eq!(cfg.backoff(1), Duration::from_millis(2));
        assert_eq!(cfg.backoff(10), Duration::from_millis(4));
        assert_eq!(cfg.backoff(40), Duration::from_millis(4));
    }
}
