//! Chat-completion clients.
//!
//! Every prompt is a `(system, user)` pair. Three interchangeable clients
//! implement [`LlmClient`]: [`OpenAiClient`] speaks the OpenAI-compatible
//! `/chat/completions` wire format, [`MockClient`] answers deterministically
//! for tests and offline runs, and [`ReplayClient`] replays recorded
//! answers keyed by prompt fingerprint.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::graph::BeliefId;
use crate::rng::{fnv1a64, SplitMix64};

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("http status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed completion response: {0}")]
    Decode(String),
    #[error("no recorded completion for fingerprint {0}")]
    ReplayMiss(String),
    #[error("missing API token: environment variable {0} is not set")]
    MissingToken(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub trait LlmClient: Send + Sync {
    fn complete(&self, system: &str, user: &str) -> Result<String, LlmError>;
}

impl<T: LlmClient + ?Sized> LlmClient for &T {
    fn complete(&self, system: &str, user: &str) -> Result<String, LlmError> {
        (**self).complete(system, user)
    }
}

impl<T: LlmClient + ?Sized> LlmClient for Box<T> {
    fn complete(&self, system: &str, user: &str) -> Result<String, LlmError> {
        (**self).complete(system, user)
    }
}

/// Hex SHA-256 of a prompt pair; the cache key everywhere prompts are cached.
pub fn fingerprint(system: &str, user: &str) -> String {
    let mut h = Sha256::new();
    h.update((system.len() as u64).to_le_bytes());
    h.update(system.as_bytes());
    h.update(user.as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClientConfig {
    pub base_url: String,
    pub model: String,
    pub temperature: f64,
    /// Attempts after the first for transient failures (and, in the persona
    /// and zero-shot layers, for unparseable answers).
    pub max_retries: u32,
    pub requests_per_second: f64,
    /// Environment variable holding the bearer token.
    pub token_env: String,
    pub timeout_secs: u64,
    /// Base delay of the exponential backoff.
    pub backoff_ms: u64,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-3.5-turbo".into(),
            temperature: 0.0,
            max_retries: 3,
            requests_per_second: 3.0,
            token_env: "OPENAI_API_KEY".into(),
            timeout_secs: 60,
            backoff_ms: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub temperature: f64,
    pub messages: Vec<ChatMessage>,
}

impl ChatRequest {
    pub fn new(config: &ClientConfig, system: &str, user: &str) -> Self {
        Self {
            model: config.model.clone(),
            temperature: config.temperature,
            messages: vec![
                ChatMessage {
                    role: "system".into(),
                    content: system.into(),
                },
                ChatMessage {
                    role: "user".into(),
                    content: user.into(),
                },
            ],
        }
    }
}

/// Extracts the first choice's message content from a completion response.
pub fn parse_completion(body: &serde_json::Value) -> Result<String, LlmError> {
    body.get("choices")
        .and_then(|c| c.get(0))
        .and_then(|c| c.get("message"))
        .and_then(|m| m.get("content"))
        .and_then(|c| c.as_str())
        .map(str::to_string)
        .ok_or_else(|| LlmError::Decode(truncate(&body.to_string(), 200)))
}

fn truncate(s: &str, n: usize) -> String {
    s.chars().take(n).collect()
}

/// Remote OpenAI-compatible client with a request-rate cap and exponential
/// backoff on transient failures (transport errors, 429, 5xx).
pub struct OpenAiClient {
    config: ClientConfig,
    token: Option<String>,
    agent: ureq::Agent,
    last_request: Mutex<Option<Instant>>,
}

impl OpenAiClient {
    /// Reads the token from `config.token_env`.
    pub fn from_env(config: ClientConfig) -> Result<Self, LlmError> {
        let token = std::env::var(&config.token_env)
            .map_err(|_| LlmError::MissingToken(config.token_env.clone()))?;
        Ok(Self::new(config, Some(token)))
    }

    pub fn new(config: ClientConfig, token: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            config,
            token,
            agent,
            last_request: Mutex::new(None),
        }
    }

    pub fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn throttle(&self) {
        if self.config.requests_per_second <= 0.0 {
            return;
        }
        let interval = Duration::from_secs_f64(1.0 / self.config.requests_per_second);
        let mut last = self.last_request.lock().expect("rate limiter lock");
        if let Some(prev) = *last {
            let elapsed = prev.elapsed();
            if elapsed < interval {
                thread::sleep(interval - elapsed);
            }
        }
        *last = Some(Instant::now());
    }

    fn attempt(&self, request: &ChatRequest) -> Result<String, (bool, LlmError)> {
        self.throttle();
        let mut req = self.agent.post(&self.endpoint());
        if let Some(token) = &self.token {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = req.send_json(request).map_err(|e| {
            (
                true,
                LlmError::Transport {
                    attempts: 1,
                    message: e.to_string(),
                },
            )
        })?;
        let status = resp.status().as_u16();
        if status != 200 {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            let transient = status == 429 || status >= 500;
            return Err((
                transient,
                LlmError::Status {
                    status,
                    body: truncate(&body, 500),
                },
            ));
        }
        let body: serde_json::Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| (false, LlmError::Decode(e.to_string())))?;
        parse_completion(&body).map_err(|e| (false, e))
    }
}

impl LlmClient for OpenAiClient {
    fn complete(&self, system: &str, user: &str) -> Result<String, LlmError> {
        let request = ChatRequest::new(&self.config, system, user);
        let mut attempt = 0;
        loop {
            match self.attempt(&request) {
                Ok(text) => return Ok(text),
                Err((transient, err)) => {
                    if !transient || attempt >= self.config.max_retries {
                        return Err(match err {
                            LlmError::Transport { message, .. } => LlmError::Transport {
                                attempts: attempt + 1,
                                message,
                            },
                            other => other,
                        });
                    }
                    let delay = self.config.backoff_ms.saturating_mul(1 << attempt.min(16));
                    log::warn!("llm request failed ({err}); retrying in {delay} ms");
                    thread::sleep(Duration::from_millis(delay));
                    attempt += 1;
                }
            }
        }
    }
}

/// Task tags placed on the first line of every system prompt so that the
/// mock client can tell prompt families apart.
pub const TASK_PERSONA: &str = "[task:latent-persona]";
pub const TASK_SOCIAL: &str = "[task:social-context]";
pub const TASK_PREDICT: &str = "[task:response-prediction]";

#[derive(Debug)]
enum MockBehavior {
    Heuristic { seed: u64 },
    Fixed(String),
    Scripted(Mutex<Vec<String>>),
}

/// Deterministic offline client.
///
/// The heuristic mode reads belief vocabulary words out of the user message
/// and answers each task family in its expected format: persona prompts get a
/// persona listing the beliefs found (or a few seeded ones when the text
/// mentions none), social-context prompts get a summary of the most common
/// neighbor beliefs, and prediction prompts score `pro<belief>` /
/// `anti<belief>` markers in the headline (underscores optional) against the
/// beliefs in context.
#[derive(Debug)]
pub struct MockClient {
    behavior: MockBehavior,
    calls: AtomicUsize,
}

impl MockClient {
    pub fn new(seed: u64) -> Self {
        Self {
            behavior: MockBehavior::Heuristic { seed },
            calls: AtomicUsize::new(0),
        }
    }

    /// Always answers `reply`.
    pub fn fixed(reply: impl Into<String>) -> Self {
        Self {
            behavior: MockBehavior::Fixed(reply.into()),
            calls: AtomicUsize::new(0),
        }
    }

    /// Answers with `replies` in order, repeating the last one when exhausted.
    pub fn scripted(replies: Vec<String>) -> Self {
        assert!(!replies.is_empty(), "scripted mock needs at least one reply");
        Self {
            behavior: MockBehavior::Scripted(Mutex::new(replies)),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl LlmClient for MockClient {
    fn complete(&self, system: &str, user: &str) -> Result<String, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(match &self.behavior {
            MockBehavior::Fixed(reply) => reply.clone(),
            MockBehavior::Scripted(queue) => {
                let mut q = queue.lock().expect("mock script lock");
                if q.len() > 1 {
                    q.remove(0)
                } else {
                    q[0].clone()
                }
            }
            MockBehavior::Heuristic { seed } => heuristic_reply(*seed, system, user),
        })
    }
}

fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
}

/// Belief words in `text` in order of first appearance.
fn mentioned_beliefs(text: &str) -> Vec<BeliefId> {
    let mut out = Vec::new();
    for w in words(text) {
        if let Some(b) = BeliefId::normalize(&w) {
            if !out.contains(&b) {
                out.push(b);
            }
        }
    }
    out
}

fn heuristic_reply(seed: u64, system: &str, user: &str) -> String {
    let task = system.lines().next().unwrap_or("");
    if task.contains(TASK_PERSONA) {
        mock_persona(seed, user)
    } else if task.contains(TASK_SOCIAL) {
        mock_social(user)
    } else if task.contains(TASK_PREDICT) {
        mock_predict(user)
    } else {
        format!("ok {:016x}", fnv1a64(user.as_bytes()) ^ seed)
    }
}

fn mock_persona(seed: u64, user: &str) -> String {
    let mut beliefs = mentioned_beliefs(user);
    let has_text = user.lines().any(|l| {
        l.starts_with("- ") || (l.starts_with("Profile: ") && !l.ends_with(crate::persona::NO_PROFILE))
    });
    if beliefs.is_empty() && has_text {
        let mut rng = SplitMix64::keyed(seed, fnv1a64(user.as_bytes()));
        let n = 1 + rng.below(2) as usize;
        while beliefs.len() < n {
            let b = BeliefId::ALL[rng.below(20) as usize];
            if !beliefs.contains(&b) {
                beliefs.push(b);
            }
        }
    }
    let (moral, human): (Vec<_>, Vec<_>) = beliefs
        .iter()
        .partition(|b| b.family() == crate::graph::BeliefFamily::MoralValue);
    let names = |v: &[&BeliefId]| v.iter().map(|b| b.as_str()).collect::<Vec<_>>();
    serde_json::json!({
        "moral_values": names(&moral),
        "human_values": names(&human),
        "views": [],
        "profession": null,
        "interests": [],
        "summary": if beliefs.is_empty() { "little is known about this user".to_string() }
                   else { format!("values {}", beliefs.iter().map(|b| b.as_str()).collect::<Vec<_>>().join(", ")) },
    })
    .to_string()
}

fn mock_social(user: &str) -> String {
    let mut counts: BTreeMap<BeliefId, usize> = BTreeMap::new();
    for line in user.lines() {
        for b in mentioned_beliefs(line) {
            *counts.entry(b).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(BeliefId, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    if ranked.is_empty() {
        return "The neighbors share no clear values.".into();
    }
    let top: Vec<&str> = ranked.iter().take(3).map(|(b, _)| b.as_str()).collect();
    format!("The user's circle mostly values {}.", top.join(", "))
}

/// Belief named by the remainder of a stance marker, ignoring underscores.
fn stance_target(rest: &str) -> Option<BeliefId> {
    let rest = rest.replace('_', "");
    BeliefId::ALL.into_iter().find(|b| b.as_str().replace('_', "") == rest)
}

fn mock_predict(user: &str) -> String {
    let mut headline = "";
    let mut context = String::new();
    for line in user.lines() {
        if let Some(h) = line.strip_prefix("Headline: ") {
            headline = h;
        } else {
            context.push_str(line);
            context.push('\n');
        }
    }
    let beliefs = mentioned_beliefs(&context);
    let mut score = 0.0f64;
    for w in words(headline) {
        let (sign, rest) = if let Some(r) = w.strip_prefix("pro") {
            (1.0, r)
        } else if let Some(r) = w.strip_prefix("anti") {
            (-1.0, r)
        } else {
            continue;
        };
        if stance_target(rest).is_some_and(|b| beliefs.contains(&b)) {
            score += sign * 0.25;
        }
    }
    let polarity = if score > 0.5 {
        "positive"
    } else if score < -0.5 {
        "negative"
    } else {
        "neutral"
    };
    let intensity = (score.abs().floor() as u8).min(3);
    format!("polarity={polarity}; intensity={intensity}")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ReplayRecord {
    fingerprint: String,
    response: String,
}

/// Replays recorded completions; on a miss it forwards to the inner client
/// (when present) and records the answer.
pub struct ReplayClient<C> {
    inner: Option<C>,
    records: Mutex<BTreeMap<String, String>>,
    path: Option<PathBuf>,
}

impl<C: LlmClient> ReplayClient<C> {
    pub fn new(inner: Option<C>) -> Self {
        Self {
            inner,
            records: Mutex::new(BTreeMap::new()),
            path: None,
        }
    }

    /// Loads recordings from `path` (missing file = empty) and appends new
    /// recordings there.
    pub fn open(inner: Option<C>, path: &Path) -> Result<Self, LlmError> {
        let mut records = BTreeMap::new();
        if path.exists() {
            let text = std::fs::read_to_string(path).map_err(|source| LlmError::Io {
                path: path.display().to_string(),
                source,
            })?;
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                let r: ReplayRecord =
                    serde_json::from_str(line).map_err(|e| LlmError::Decode(e.to_string()))?;
                records.insert(r.fingerprint, r.response);
            }
        }
        Ok(Self {
            inner,
            records: Mutex::new(records),
            path: Some(path.to_path_buf()),
        })
    }

    pub fn len(&self) -> usize {
        self.records.lock().expect("replay lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn append(&self, record: &ReplayRecord) -> Result<(), LlmError> {
        use std::io::Write;
        let Some(path) = &self.path else { return Ok(()) };
        let io = |source| LlmError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io)?;
        writeln!(f, "{}", serde_json::to_string(record).expect("record serializes")).map_err(io)
    }
}

impl<C: LlmClient> LlmClient for ReplayClient<C> {
    fn complete(&self, system: &str, user: &str) -> Result<String, LlmError> {
        let key = fingerprint(system, user);
        if let Some(hit) = self.records.lock().expect("replay lock").get(&key) {
            return Ok(hit.clone());
        }
        let Some(inner) = &self.inner else {
            return Err(LlmError::ReplayMiss(key));
        };
        let response = inner.complete(system, user)?;
        let mut records = self.records.lock().expect("replay lock");
        if !records.contains_key(&key) {
            let rec = ReplayRecord {
                fingerprint: key.clone(),
                response: response.clone(),
            };
            self.append(&rec)?;
            records.insert(key, response.clone());
        }
        Ok(response)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_wire_format() {
        let cfg = ClientConfig::default();
        let req = ChatRequest::new(&cfg, "sys", "hello");
        let v = serde_json::to_value(&req).unwrap();
        assert_eq!(v["model"], "gpt-3.5-turbo");
        assert_eq!(v["temperature"], 0.0);
        assert_eq!(v["messages"][0]["role"], "system");
        assert_eq!(v["messages"][1]["content"], "hello");
    }

    #[test]
    fn completion_parsing() {
        let body = serde_json::json!({"choices":[{"message":{"role":"assistant","content":"hi"}}]});
        assert_eq!(parse_completion(&body).unwrap(), "hi");
        assert!(parse_completion(&serde_json::json!({"choices":[]})).is_err());
    }

    #[test]
    fn fingerprint_separates_fields() {
        assert_ne!(fingerprint("ab", "c"), fingerprint("a", "bc"));
        assert_eq!(fingerprint("a", "b"), fingerprint("a", "b"));
        assert_eq!(fingerprint("a", "b").len(), 64);
    }

    #[test]
    fn mock_is_deterministic() {
        let a = MockClient::new(3);
        let b = MockClient::new(3);
        let sys = format!("{TASK_PERSONA}\ninstructions");
        let user = "Profile: (none)\nRecent posts:\n- nothing to see";
        assert_eq!(a.complete(&sys, user).unwrap(), b.complete(&sys, user).unwrap());
        assert_eq!(a.calls(), 1);
    }

    #[test]
    fn mock_prediction_scores_headline() {
        let m = MockClient::new(0);
        let sys = format!("{TASK_PREDICT}\n");
        let user = "Values: care\nHeadline: pro_care pro_care pro_care";
        assert_eq!(m.complete(&sys, user).unwrap(), "polarity=positive; intensity=0");
        let compact = "Values: self_direction\nHeadline: antiselfdirection antiselfdirection antiselfdirection";
        assert_eq!(m.complete(&sys, compact).unwrap(), "polarity=negative; intensity=0");
        let unrelated = "Values: care\nHeadline: procare procare antipower antipower antipower";
        assert_eq!(m.complete(&sys, unrelated).unwrap(), "polarity=neutral; intensity=0");
    }

    #[test]
    fn replay_matches_inner_and_misses_without_inner() {
        let replay = ReplayClient::new(Some(MockClient::new(1)));
        let direct = MockClient::new(1);
        let sys = format!("{TASK_SOCIAL}\n");
        assert_eq!(replay.complete(&sys, "care").unwrap(), direct.complete(&sys, "care").unwrap());
        assert_eq!(replay.len(), 1);
        let empty: ReplayClient<MockClient> = ReplayClient::new(None);
        assert!(matches!(empty.complete("a", "b"), Err(LlmError::ReplayMiss(_))));
    }

    #[test]
    fn scripted_sequence() {
        let m = MockClient::scripted(vec!["a".into(), "b".into()]);
        assert_eq!(m.complete("", "").unwrap(), "a");
        assert_eq!(m.complete("", "").unwrap(), "b");
        assert_eq!(m.complete("", "").unwrap(), "b");
    }
}
