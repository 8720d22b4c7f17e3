//! Sources of [`TokenScoring`] values.
//!
//! Three backends share the [`ScoringBackend`] trait:
//!
//! - [`MockBackend`]: a context-free uniform model whose numbers can be worked
//!   out by hand. Words are whitespace-delimited and cut into pieces of at most
//!   `piece_length` characters. The whitespace before a word belongs to its
//!   first piece. Every piece has logprob `-ln(vocab_size)`.
//! - [`PrecomputedBackend`]: a JSONL dump of score records keyed by `(model, text)`.
//! - [`HttpBackend`]: a remote scoring service speaking `POST /v1/score`.
//!
//! Score records on disk and on the wire share one shape:
//!
//! ```text
//! {"model": str, "text": str,
//!  "tokens": [{"piece": str, "start": int, "end": int, "logprob": float, "special": bool}]}
//! ```
//!
//! Tokens may also carry an optional `boundary_mass`. The record may carry an
//! optional `final_boundary_mass`. Both are only needed for boundary-corrected
//! surprisal.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alignment::{ScoredToken, TokenScoring};

/// Environment variable overriding the HTTP request timeout.
pub const HTTP_TIMEOUT_ENV: &str = "SURPNOV_HTTP_TIMEOUT_MS";
pub const DEFAULT_HTTP_TIMEOUT_MS: u64 = 30_000;
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;
pub const DEFAULT_ATTEMPTS: u32 = 3;

pub const BOS_PIECE: &str = "<bos>";
/// Boundary mass the mock model reports at every position when asked.
pub const MOCK_BOUNDARY_MASS: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Precomputed,
    Http,
    Mock,
}

/// Which backend produced a set of log-probabilities, and with what options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    pub model_id: String,
    pub prepend_bos: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab_size_hint: Option<usize>,
}

impl BackendDescriptor {
    pub fn mock(model_id: impl Into<String>, lm: MockLM) -> Self {
        Self {
            kind: BackendKind::Mock,
            model_id: model_id.into(),
            prepend_bos: true,
            endpoint: None,
            path: None,
            vocab_size_hint: Some(lm.vocab_size),
        }
    }

    pub fn http(model_id: impl Into<String>, endpoint: impl Into<String>) -> Self {
        Self {
            kind: BackendKind::Http,
            model_id: model_id.into(),
            prepend_bos: true,
            endpoint: Some(endpoint.into()),
            path: None,
            vocab_size_hint: None,
        }
    }

    pub fn precomputed(model_id: impl Into<String>, path: impl Into<PathBuf>) -> Self {
        Self {
            kind: BackendKind::Precomputed,
            model_id: model_id.into(),
            prepend_bos: true,
            endpoint: None,
            path: Some(path.into()),
            vocab_size_hint: None,
        }
    }

    pub fn with_bos(mut self, prepend_bos: bool) -> Self {
        self.prepend_bos = prepend_bos;
        self
    }

    /// `endpoint` present iff http, `path` present iff precomputed.
    pub fn validate(&self) -> Result<(), BackendError> {
        let http = self.kind == BackendKind::Http;
        let pre = self.kind == BackendKind::Precomputed;
        if self.endpoint.is_some() != http {
            return Err(BackendError::Config("endpoint must be set exactly for http backends".into()));
        }
        if self.path.is_some() != pre {
            return Err(BackendError::Config("path must be set exactly for precomputed backends".into()));
        }
        if self.model_id.is_empty() {
            return Err(BackendError::Config("model id is empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("cannot score empty text")]
    EmptyText,
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("server error {status} after {attempts} attempt(s): {body}")]
    Server { status: u16, attempts: u32, body: String },
    #[error("request rejected (400): {0}")]
    BadRequest(String),
    #[error("unknown model {0:?}")]
    UnknownModel(String),
    #[error("unexpected status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("no precomputed scoring for model {model:?}, text {text:?}")]
    CacheMiss { model: String, text: String },
    #[error("invalid score record: {0}")]
    InvalidRecord(String),
    #[error("{path}: line {line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("backend misconfigured: {0}")]
    Config(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transport { .. } | BackendError::Server { .. })
    }
}

/// Score record as stored in precomputed files and returned by `/v1/score`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub model: String,
    pub text: String,
    pub tokens: Vec<ScoredToken>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_boundary_mass: Option<f64>,
}

impl ScoreRecord {
    pub fn new(model: impl Into<String>, scoring: TokenScoring) -> Self {
        Self {
            model: model.into(),
            text: scoring.text,
            tokens: scoring.tokens,
            final_boundary_mass: scoring.final_boundary_mass,
        }
    }

    pub fn into_scoring(self) -> TokenScoring {
        TokenScoring {
            text: self.text,
            tokens: self.tokens,
            final_boundary_mass: self.final_boundary_mass,
        }
    }
}

/// Request body for `POST /v1/score`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub model: String,
    pub text: String,
    pub prepend_bos: bool,
}

pub trait ScoringBackend: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    fn score_text(&self, text: &str) -> Result<TokenScoring, BackendError>;

    /// Order-preserving; one failure never aborts the rest of the batch.
    fn batch_score(&self, texts: &[String]) -> Vec<Result<TokenScoring, BackendError>> {
        texts.iter().map(|t| self.score_text(t)).collect()
    }
}

/// Indices of failed entries in a batch result.
pub fn failed_indices<T, E>(results: &[Result<T, E>]) -> Vec<usize> {
    results
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.is_err().then_some(i))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockLM {
    pub piece_length: usize,
    pub vocab_size: usize,
}

impl Default for MockLM {
    fn default() -> Self {
        Self {
            piece_length: 4,
            vocab_size: 100,
        }
    }
}

impl MockLM {
    pub fn new(piece_length: usize, vocab_size: usize) -> Result<Self, BackendError> {
        if piece_length < 1 || vocab_size < 2 {
            return Err(BackendError::Config(format!(
                "mock needs piece_length >= 1 and vocab_size >= 2, got {piece_length} and {vocab_size}"
            )));
        }
        Ok(Self {
            piece_length,
            vocab_size,
        })
    }

    pub fn token_logprob(&self) -> f64 {
        -(self.vocab_size as f64).ln()
    }

    /// Character ranges of the mock's pieces over `text`.
    pub fn tokenize(&self, text: &str) -> Vec<(usize, usize)> {
        let chars: Vec<char> = text.chars().collect();
        let mut pieces = Vec::new();
        let mut pos = 0;
        let mut pending_ws = 0;
        while pos < chars.len() {
            if chars[pos].is_whitespace() {
                pos += 1;
                continue;
            }
            let word_start = pos;
            while pos < chars.len() && !chars[pos].is_whitespace() {
                pos += 1;
            }
            let mut start = word_start;
            while start < pos {
                let end = (start + self.piece_length).min(pos);
                let piece_start = if start == word_start { pending_ws } else { start };
                pieces.push((piece_start, end));
                start = end;
            }
            pending_ws = pos;
        }
        pieces
    }
}

pub struct MockBackend {
    descriptor: BackendDescriptor,
    lm: MockLM,
    boundary_masses: bool,
}

impl MockBackend {
    pub fn new(descriptor: BackendDescriptor, lm: MockLM) -> Self {
        Self {
            descriptor,
            lm,
            boundary_masses: false,
        }
    }

    /// Attach [`MOCK_BOUNDARY_MASS`] to every position.
    pub fn with_boundary_masses(mut self, on: bool) -> Self {
        self.boundary_masses = on;
        self
    }

    pub fn lm(&self) -> MockLM {
        self.lm
    }
}

impl ScoringBackend for MockBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn score_text(&self, text: &str) -> Result<TokenScoring, BackendError> {
        if text.is_empty() {
            return Err(BackendError::EmptyText);
        }
        let mass = self.boundary_masses.then_some(MOCK_BOUNDARY_MASS);
        let chars: Vec<char> = text.chars().collect();
        let mut tokens = Vec::new();
        if self.descriptor.prepend_bos {
            tokens.push(ScoredToken {
                piece: BOS_PIECE.to_owned(),
                start: 0,
                end: 0,
                logprob: 0.0,
                special: true,
                boundary_mass: None,
            });
        }
        let logprob = self.lm.token_logprob();
        for (start, end) in self.lm.tokenize(text) {
            tokens.push(ScoredToken {
                piece: chars[start..end].iter().collect(),
                start,
                end,
                logprob,
                special: false,
                boundary_mass: mass,
            });
        }
        Ok(TokenScoring {
            text: text.to_owned(),
            tokens,
            final_boundary_mass: mass,
        })
    }
}

/// Precomputed scorings loaded from a JSONL dump.
pub struct PrecomputedBackend {
    descriptor: BackendDescriptor,
    records: HashMap<(String, String), TokenScoring>,
}

impl PrecomputedBackend {
    pub fn open(descriptor: BackendDescriptor) -> Result<Self, BackendError> {
        descriptor.validate()?;
        let path = descriptor.path.clone().expect("validated");
        let text = fs::read_to_string(&path).map_err(|source| BackendError::Io {
            path: path.clone(),
            source,
        })?;
        let records = parse_score_records(&path, &text)?;
        Ok(Self { descriptor, records })
    }

    pub fn from_records(descriptor: BackendDescriptor, records: Vec<ScoreRecord>) -> Result<Self, BackendError> {
        let mut map = HashMap::new();
        for record in records {
            let key = (record.model.clone(), record.text.clone());
            let scoring = record.into_scoring();
            scoring
                .validate()
                .map_err(|e| BackendError::InvalidRecord(e.to_string()))?;
            map.insert(key, scoring);
        }
        Ok(Self {
            descriptor,
            records: map,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

fn parse_score_records(path: &Path, text: &str) -> Result<HashMap<(String, String), TokenScoring>, BackendError> {
    let mut map: HashMap<(String, String), TokenScoring> = HashMap::new();
    for (idx, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| BackendError::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message,
        };
        let record: ScoreRecord = serde_json::from_str(raw).map_err(|e| parse_err(e.to_string()))?;
        let key = (record.model.clone(), record.text.clone());
        let scoring = record.into_scoring();
        scoring.validate().map_err(|e| parse_err(e.to_string()))?;
        if let Some(existing) = map.get(&key) {
            if *existing != scoring {
                return Err(parse_err(format!("conflicting duplicate record for model {:?}", key.0)));
            }
        }
        map.insert(key, scoring);
    }
    Ok(map)
}

/// Serialize scorings as a precomputed JSONL dump.
pub fn to_score_jsonl<'a>(model: &str, scorings: impl IntoIterator<Item = &'a TokenScoring>) -> String {
    let mut out = String::new();
    for scoring in scorings {
        let record = ScoreRecord::new(model, scoring.clone());
        out.push_str(&serde_json::to_string(&record).expect("records serialize"));
        out.push('\n');
    }
    out
}

impl ScoringBackend for PrecomputedBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn score_text(&self, text: &str) -> Result<TokenScoring, BackendError> {
        if text.is_empty() {
            return Err(BackendError::EmptyText);
        }
        self.records
            .get(&(self.descriptor.model_id.clone(), text.to_owned()))
            .cloned()
            .ok_or_else(|| BackendError::CacheMiss {
                model: self.descriptor.model_id.clone(),
                text: text.to_owned(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HttpOptions {
    pub timeout: Duration,
    pub max_in_flight: usize,
    pub attempts: u32,
    /// Delay before the second attempt; doubles for each further attempt.
    pub backoff: Duration,
    /// Ask the server for boundary masses (`?boundary=1`).
    pub boundary_masses: bool,
}

impl Default for HttpOptions {
    fn default() -> Self {
        Self {
            timeout: Duration::from_millis(DEFAULT_HTTP_TIMEOUT_MS),
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
            attempts: DEFAULT_ATTEMPTS,
            backoff: Duration::from_millis(200),
            boundary_masses: false,
        }
    }
}

impl HttpOptions {
    /// Defaults, with the timeout taken from `SURPNOV_HTTP_TIMEOUT_MS` when set.
    pub fn from_env() -> Result<Self, BackendError> {
        let mut opts = Self::default();
        if let Ok(raw) = std::env::var(HTTP_TIMEOUT_ENV) {
            let ms: u64 = raw
                .trim()
                .parse()
                .map_err(|_| BackendError::Config(format!("{HTTP_TIMEOUT_ENV}={raw:?} is not an integer")))?;
            opts.timeout = Duration::from_millis(ms);
        }
        Ok(opts)
    }
}

pub struct HttpBackend {
    descriptor: BackendDescriptor,
    options: HttpOptions,
    agent: ureq::Agent,
    url: String,
}

impl HttpBackend {
    pub fn new(descriptor: BackendDescriptor, options: HttpOptions) -> Result<Self, BackendError> {
        descriptor.validate()?;
        if options.max_in_flight == 0 || options.attempts == 0 {
            return Err(BackendError::Config("max_in_flight and attempts must be positive".into()));
        }
        let endpoint = descriptor.endpoint.as_deref().expect("validated");
        let mut url = format!("{}/v1/score", endpoint.trim_end_matches('/'));
        if options.boundary_masses {
            url.push_str("?boundary=1");
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(options.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            descriptor,
            options,
            agent,
            url,
        })
    }

    fn attempt(&self, body: &str, attempt: u32) -> Result<TokenScoring, BackendError> {
        let transport = |e: ureq::Error| BackendError::Transport {
            attempts: attempt,
            message: e.to_string(),
        };
        let mut resp = self
            .agent
            .post(&self.url)
            .header("content-type", "application/json")
            .send(body)
            .map_err(transport)?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(transport)?;
        match status {
            200 => {}
            400 => return Err(BackendError::BadRequest(text)),
            404 => return Err(BackendError::UnknownModel(self.descriptor.model_id.clone())),
            s if s >= 500 => {
                return Err(BackendError::Server {
                    status: s,
                    attempts: attempt,
                    body: text,
                })
            }
            s => return Err(BackendError::Status { status: s, body: text }),
        }
        let record: ScoreRecord =
            serde_json::from_str(&text).map_err(|e| BackendError::InvalidRecord(e.to_string()))?;
        Ok(record.into_scoring())
    }
}

impl ScoringBackend for HttpBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn score_text(&self, text: &str) -> Result<TokenScoring, BackendError> {
        if text.is_empty() {
            return Err(BackendError::EmptyText);
        }
        let body = serde_json::to_string(&ScoreRequest {
            model: self.descriptor.model_id.clone(),
            text: text.to_owned(),
            prepend_bos: self.descriptor.prepend_bos,
        })
        .expect("requests serialize");
        let mut delay = self.options.backoff;
        let mut attempt = 1;
        let scoring = loop {
            match self.attempt(&body, attempt) {
                Ok(scoring) => break scoring,
                Err(err) if err.is_retryable() && attempt < self.options.attempts => {
                    log::warn!("scoring request failed (attempt {attempt}): {err}; retrying in {delay:?}");
                    thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
                Err(err) => return Err(err),
            }
        };
        if scoring.text != text {
            return Err(BackendError::InvalidRecord(format!(
                "server scored {:?}, requested {text:?}",
                scoring.text
            )));
        }
        scoring
            .validate()
            .map_err(|e| BackendError::InvalidRecord(e.to_string()))?;
        Ok(scoring)
    }

    fn batch_score(&self, texts: &[String]) -> Vec<Result<TokenScoring, BackendError>> {
        let workers = self.options.max_in_flight.min(texts.len());
        if workers <= 1 {
            return texts.iter().map(|t| self.score_text(t)).collect();
        }
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<Result<TokenScoring, BackendError>>>> =
            Mutex::new((0..texts.len()).map(|_| None).collect());
        thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let idx = next.fetch_add(1, Ordering::Relaxed);
                    let Some(text) = texts.get(idx) else { break };
                    let result = self.score_text(text);
                    slots.lock().expect("no worker panics while holding the lock")[idx] = Some(result);
                });
            }
        });
        slots
            .into_inner()
            .expect("workers joined")
            .into_iter()
            .map(|slot| slot.expect("every index visited"))
            .collect()
    }
}

/// Build the backend a descriptor names. `boundary_masses` requests per-position
/// boundary masses where the backend can produce them.
pub fn open_backend(
    descriptor: BackendDescriptor,
    mock: MockLM,
    http: HttpOptions,
) -> Result<Box<dyn ScoringBackend>, BackendError> {
    descriptor.validate()?;
    Ok(match descriptor.kind {
        BackendKind::Mock => Box::new(MockBackend::new(descriptor, mock).with_boundary_masses(http.boundary_masses)),
        BackendKind::Precomputed => Box::new(PrecomputedBackend::open(descriptor)?),
        BackendKind::Http => Box::new(HttpBackend::new(descriptor, http)?),
    })
}

/// Parse `mock`, `precomputed:PATH` or `http:URL` into a descriptor for `model_id`.
///
/// `http:` accepts a full URL (`http:http://host:8000`), a bare authority
/// (`http:host:8000`), or the URL itself (`http://host:8000`).
pub fn parse_backend_spec(spec: &str, model_id: &str, mock: MockLM) -> Result<BackendDescriptor, BackendError> {
    let bad = || BackendError::Config(format!("backend {spec:?} is not mock, precomputed:PATH or http:URL"));
    let desc = if spec == "mock" {
        BackendDescriptor::mock(model_id, mock)
    } else if spec.starts_with("http://") || spec.starts_with("https://") {
        BackendDescriptor::http(model_id, spec)
    } else if let Some(rest) = spec.strip_prefix("http:") {
        let endpoint = if rest.starts_with("//") {
            format!("http:{rest}")
        } else if rest.contains("://") {
            rest.to_owned()
        } else if rest.is_empty() {
            return Err(bad());
        } else {
            format!("http://{rest}")
        };
        BackendDescriptor::http(model_id, endpoint)
    } else if let Some(path) = spec.strip_prefix("precomputed:") {
        if path.is_empty() {
            return Err(bad());
        }
        BackendDescriptor::precomputed(model_id, path)
    } else {
        return Err(bad());
    };
    desc.validate()?;
    Ok(desc)
}
