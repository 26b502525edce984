use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::cache::{cache_key, ResponseCache};
use super::wire::{decode_response, excerpt, WireRequest, SCORE_PATH};
use crate::scoring::{Capabilities, ScoreError, Scorer, ScorerQuery, ScorerResponse};
use crate::seqcore::Alphabet;

pub const ENDPOINT_ENV: &str = "ICLAUDIT_REMOTE_ENDPOINT";
pub const TOKEN_ENV: &str = "ICLAUDIT_REMOTE_TOKEN";

const BODY_LIMIT: u64 = 1 << 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    /// Server root, for example `http://localhost:8000`.
    pub endpoint: String,
    pub model: String,
    /// Alphabet whose symbol order the server's rows follow.
    pub alphabet: String,
    /// Bearer token. Falls back to the token environment variable.
    #[serde(skip_serializing)]
    pub token: Option<String>,
    pub cache_dir: Option<PathBuf>,
    pub max_in_flight: usize,
    /// Retries after the first attempt for transport failures and 5xx/429.
    pub retries: u32,
    pub backoff_ms: u64,
    pub timeout_secs: u64,
    pub max_len: Option<usize>,
    /// The model serves embeddings.
    pub embeddings: bool,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            model: String::new(),
            alphabet: "protein".into(),
            token: None,
            cache_dir: None,
            max_in_flight: 4,
            retries: 3,
            backoff_ms: 250,
            timeout_secs: 120,
            max_len: None,
            embeddings: true,
        }
    }
}

impl RemoteConfig {
    /// Fills an empty endpoint and a missing token from the environment.
    pub fn with_env(mut self) -> Self {
        if self.endpoint.is_empty() {
            if let Ok(e) = std::env::var(ENDPOINT_ENV) {
                self.endpoint = e;
            }
        }
        if self.token.is_none() {
            self.token = std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty());
        }
        self
    }
}

/// A [`Scorer`] backed by a model server speaking the scoring protocol.
pub struct RemoteScorer {
    cfg: RemoteConfig,
    alphabet: Arc<Alphabet>,
    agent: ureq::Agent,
    cache: Option<ResponseCache>,
    network_calls: AtomicU64,
    cache_hits: AtomicU64,
}

impl std::fmt::Debug for RemoteScorer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteScorer").field("endpoint", &self.cfg.endpoint).field("model", &self.cfg.model).finish()
    }
}

enum Attempt {
    Done(String),
    Retry(ScoreError),
    Fatal(ScoreError),
}

impl RemoteScorer {
    pub fn new(cfg: RemoteConfig) -> Result<Self, ScoreError> {
        if cfg.endpoint.is_empty() {
            return Err(ScoreError::InvalidQuery(format!("no endpoint configured (set {ENDPOINT_ENV})")));
        }
        if cfg.model.is_empty() {
            return Err(ScoreError::InvalidQuery("no model id configured".into()));
        }
        if cfg.max_in_flight == 0 {
            return Err(ScoreError::InvalidQuery("max_in_flight must be at least 1".into()));
        }
        let alphabet = Alphabet::by_name(&cfg.alphabet)?;
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs)))
            .build()
            .into();
        let cache = cfg.cache_dir.as_ref().map(ResponseCache::new);
        Ok(Self { cfg, alphabet, agent, cache, network_calls: AtomicU64::new(0), cache_hits: AtomicU64::new(0) })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.cfg
    }

    /// HTTP requests issued so far, retries included.
    pub fn network_calls(&self) -> u64 {
        self.network_calls.load(Ordering::Relaxed)
    }

    pub fn cache_hits(&self) -> u64 {
        self.cache_hits.load(Ordering::Relaxed)
    }

    fn url(&self) -> String {
        format!("{}{SCORE_PATH}", self.cfg.endpoint.trim_end_matches('/'))
    }

    fn attempt(&self, body: &[u8]) -> Attempt {
        self.network_calls.fetch_add(1, Ordering::Relaxed);
        let mut req = self.agent.post(self.url()).header("Content-Type", "application/json");
        if let Some(t) = &self.cfg.token {
            req = req.header("Authorization", format!("Bearer {t}"));
        }
        let mut resp = match req.send(body) {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(ScoreError::Transport(e.to_string())),
        };
        let status = resp.status().as_u16();
        let text = match resp.body_mut().with_config().limit(BODY_LIMIT).read_to_string() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(ScoreError::Transport(format!("reading body: {e}"))),
        };
        match status {
            200..=299 => Attempt::Done(text),
            429 | 500..=599 => Attempt::Retry(ScoreError::Transport(format!("HTTP {status}: {}", excerpt(&text)))),
            401 | 403 => Attempt::Fatal(ScoreError::Transport(format!(
                "HTTP {status}: not authorized (set {TOKEN_ENV})"
            ))),
            _ => Attempt::Fatal(ScoreError::Protocol(format!("HTTP {status}; payload: {}", excerpt(&text)))),
        }
    }

    fn post(&self, body: &[u8]) -> Result<String, ScoreError> {
        let mut last = None;
        for k in 0..=self.cfg.retries {
            if k > 0 {
                std::thread::sleep(Duration::from_millis(self.cfg.backoff_ms << (k - 1)));
            }
            match self.attempt(body) {
                Attempt::Done(t) => return Ok(t),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(e) => last = Some(e),
            }
        }
        let e = last.expect("at least one attempt");
        Err(ScoreError::Transport(format!("gave up after {} attempts: {e}", self.cfg.retries + 1)))
    }

    fn score_one(&self, query: &ScorerQuery<'_>) -> Result<ScorerResponse, ScoreError> {
        let caps = self.capabilities();
        caps.check_wants(query.wants)?;
        caps.check_len(query.sequence.len())?;
        if query.sequence.alphabet().symbols() != self.alphabet.symbols() {
            return Err(ScoreError::InvalidQuery(format!(
                "sequence alphabet does not match the configured {} alphabet",
                self.cfg.alphabet
            )));
        }
        let mut request = WireRequest::from_query(&self.cfg.model, query);
        let key = cache_key(&request);
        request.batch_id = key[..16].to_string();
        if let Some(cache) = &self.cache {
            if let Some(body) = cache.get(&key).map_err(|e| ScoreError::Transport(format!("cache: {e}")))? {
                self.cache_hits.fetch_add(1, Ordering::Relaxed);
                return decode_response(&body, &request, &self.alphabet);
            }
        }
        let payload = serde_json::to_vec(&request).expect("requests serialize");
        let body = self.post(&payload)?;
        let decoded = decode_response(&body, &request, &self.alphabet)?;
        if let Some(cache) = &self.cache {
            cache.put(&key, &body).map_err(|e| ScoreError::Transport(format!("cache: {e}")))?;
        }
        Ok(decoded)
    }
}

impl Scorer for RemoteScorer {
    fn name(&self) -> String {
        format!("remote:{}", self.cfg.model)
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            distributions: true,
            embeddings: self.cfg.embeddings,
            causal: false,
            max_len: self.cfg.max_len,
            concurrent: true,
        }
    }

    /// Issues up to `max_in_flight` requests at a time; responses come back
    /// in query order.
    fn score_batch(&self, queries: &[ScorerQuery<'_>]) -> Result<Vec<ScorerResponse>, ScoreError> {
        let workers = self.cfg.max_in_flight.min(queries.len());
        if workers <= 1 {
            return queries.iter().map(|q| self.score_one(q)).collect();
        }
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<Result<ScorerResponse, ScoreError>>>> =
            Mutex::new((0..queries.len()).map(|_| None).collect());
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(q) = queries.get(i) else { break };
                    let r = self.score_one(q);
                    let failed = r.is_err();
                    slots.lock().expect("no worker panics")[i] = Some(r);
                    if failed {
                        next.store(queries.len(), Ordering::Relaxed);
                    }
                });
            }
        });
        let slots = slots.into_inner().expect("no worker panics");
        let mut out = Vec::with_capacity(queries.len());
        for slot in slots {
            match slot {
                Some(r) => out.push(r?),
                None => return Err(ScoreError::Transport("batch abandoned after an earlier failure".into())),
            }
        }
        Ok(out)
    }
}
