//! Chat-completion clients: an HTTP client for chat-completions endpoints
//! and two deterministic stand-ins (scripted replay and a hill-climbing
//! heuristic) for tests and offline runs.

use std::collections::VecDeque;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use base64::Engine as _;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::dose::degree_key;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageAttachment {
    pub media_type: String,
    pub data: Vec<u8>,
}

impl ImageAttachment {
    pub fn png(data: Vec<u8>) -> Self {
        Self {
            media_type: "image/png".into(),
            data,
        }
    }

    pub fn data_url(&self) -> String {
        format!(
            "data:{};base64,{}",
            self.media_type,
            base64::engine::general_purpose::STANDARD.encode(&self.data)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatMessage {
    pub role: Role,
    pub text: String,
    pub images: Vec<ImageAttachment>,
}

impl ChatMessage {
    pub fn system(text: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            text: text.into(),
            images: Vec::new(),
        }
    }

    pub fn user(text: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            text: text.into(),
            images: Vec::new(),
        }
    }

    pub fn user_with_images(text: impl Into<String>, images: Vec<ImageAttachment>) -> Self {
        Self {
            role: Role::User,
            text: text.into(),
            images,
        }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            text: text.into(),
            images: Vec::new(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("invalid conversation: {0}")]
    Precondition(String),
    #[error("scripted responses exhausted")]
    QueueExhausted,
    #[error("configuration: {0}")]
    Config(String),
    #[error("authentication rejected (HTTP {0})")]
    Auth(u16),
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
}

/// Anything that can answer a conversation ending in a user message.
/// Implementations must tolerate concurrent calls.
pub trait ChatClient: Send + Sync {
    fn complete(&self, history: &[ChatMessage]) -> Result<String, ClientError>;
}

/// Checks that `history` is non-empty, ends with a user message and carries
/// no images on assistant turns.
pub fn check_history(history: &[ChatMessage]) -> Result<(), ClientError> {
    match history.last() {
        None => return Err(ClientError::Precondition("empty history".into())),
        Some(m) if m.role != Role::User => {
            return Err(ClientError::Precondition(format!(
                "history must end with a user message, not {:?}",
                m.role
            )))
        }
        _ => {}
    }
    if history.iter().any(|m| m.role == Role::Assistant && !m.images.is_empty()) {
        return Err(ClientError::Precondition("assistant messages cannot carry images".into()));
    }
    Ok(())
}

/// Replays a fixed queue of responses, one per call.
#[derive(Debug, Default)]
pub struct ScriptedClient {
    queue: Mutex<VecDeque<String>>,
}

impl ScriptedClient {
    pub fn new<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            queue: Mutex::new(responses.into_iter().map(Into::into).collect()),
        }
    }

    pub fn remaining(&self) -> usize {
        self.queue.lock().expect("scripted client lock").len()
    }
}

impl ChatClient for ScriptedClient {
    fn complete(&self, history: &[ChatMessage]) -> Result<String, ClientError> {
        check_history(history)?;
        self.queue
            .lock()
            .expect("scripted client lock")
            .pop_front()
            .ok_or(ClientError::QueueExhausted)
    }
}

/// Extracts the integer reward from a refinement prompt ("... a reward of -230 ...").
pub fn reported_reward(text: &str) -> Option<f64> {
    let re = Regex::new(r"reward of (-?\d+(?:\.\d+)?)").expect("static regex");
    re.captures(text).and_then(|c| c[1].parse().ok())
}

/// Formats angles as a `{"gantry_angles": [...]}` object, whole numbers
/// without a fractional part.
pub fn angles_json(angles: &[f64]) -> String {
    let parts: Vec<String> = angles
        .iter()
        .map(|&a| {
            if a.fract() == 0.0 && a.abs() < 1e15 {
                format!("{}", a as i64)
            } else {
                format!("{a}")
            }
        })
        .collect();
    format!("{{\"gantry_angles\": [{}]}}", parts.join(", "))
}

#[derive(Debug)]
struct HillState {
    rng: ChaCha8Rng,
    best: Option<Vec<f64>>,
    best_reward: Option<f64>,
    last_proposal: Option<Vec<f64>>,
}

/// Seeded coordinate-descent stand-in for a language model. It ignores
/// images, reads the reward from the latest user message, keeps the last
/// proposal if that reward beat the best so far, and otherwise reverts;
/// then moves one angle by ±10°.
#[derive(Debug)]
pub struct HillClimbClient {
    n_beams: usize,
    state: Mutex<HillState>,
}

pub const HILL_CLIMB_STEP_DEG: f64 = 10.0;

impl HillClimbClient {
    pub fn new(seed: u64, n_beams: usize) -> Self {
        assert!((1..=36).contains(&n_beams), "beam count must be within 1..=36");
        Self {
            n_beams,
            state: Mutex::new(HillState {
                rng: ChaCha8Rng::seed_from_u64(seed),
                best: None,
                best_reward: None,
                last_proposal: None,
            }),
        }
    }

    pub fn equally_spaced(n: usize) -> Vec<f64> {
        (0..n).map(|k| 360.0 * k as f64 / n as f64).collect()
    }

    fn perturb(rng: &mut ChaCha8Rng, base: &[f64]) -> Vec<f64> {
        let n = base.len();
        let start = rng.gen_range(0..n);
        let first_sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        for k in 0..n {
            let i = (start + k) % n;
            for sign in [first_sign, -first_sign] {
                let moved = (base[i] + sign * HILL_CLIMB_STEP_DEG).rem_euclid(360.0);
                let key = degree_key(moved);
                let clash = base
                    .iter()
                    .enumerate()
                    .any(|(j, &a)| j != i && degree_key(a) == key);
                if !clash {
                    let mut out = base.to_vec();
                    out[i] = moved;
                    return out;
                }
            }
        }
        base.to_vec()
    }
}

impl ChatClient for HillClimbClient {
    fn complete(&self, history: &[ChatMessage]) -> Result<String, ClientError> {
        check_history(history)?;
        let latest = &history[history.len() - 1].text;
        let mut st = self.state.lock().expect("hill-climb lock");
        let st = &mut *st;
        let proposal = match st.last_proposal.take() {
            None => Self::equally_spaced(self.n_beams),
            Some(prev) => {
                let reward = reported_reward(latest);
                let improved = match (reward, st.best_reward) {
                    (Some(r), None) => Some(r),
                    (Some(r), Some(b)) if r > b => Some(r),
                    _ => None,
                };
                if let Some(r) = improved {
                    st.best = Some(prev.clone());
                    st.best_reward = Some(r);
                }
                let base = st.best.clone().unwrap_or(prev);
                Self::perturb(&mut st.rng, &base)
            }
        };
        st.last_proposal = Some(proposal.clone());
        Ok(format!(
            "Adjusting one beam relative to the best plan so far. Proposed angles:\n\n```json\n{}\n```\n\nI will keep refining based on the next score.",
            angles_json(&proposal)
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClientConfig {
    pub base_url: String,
    pub model_name: String,
    /// Name of the environment variable that holds the API key.
    pub api_key_env_var: String,
    pub timeout_s: f64,
    pub max_retries: u32,
    pub temperature: f64,
    /// First backoff delay; doubles on each retry.
    pub backoff_initial_s: f64,
    /// Minimum spacing between the starts of consecutive requests.
    pub min_request_interval_s: f64,
    /// JSON-lines log of request metadata, if set.
    pub call_log: Option<PathBuf>,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            model_name: "gpt-4o".into(),
            api_key_env_var: "OPENAI_API_KEY".into(),
            timeout_s: 120.0,
            max_retries: 3,
            temperature: 0.0,
            backoff_initial_s: 1.0,
            min_request_interval_s: 0.0,
            call_log: None,
        }
    }
}

impl ClientConfig {
    pub fn validate(&self) -> Result<(), ClientError> {
        if !(self.timeout_s > 0.0 && self.timeout_s.is_finite()) {
            return Err(ClientError::Config(format!("timeout_s {} must be positive", self.timeout_s)));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(ClientError::Config(format!("temperature {} must be non-negative", self.temperature)));
        }
        if !(self.backoff_initial_s >= 0.0 && self.min_request_interval_s >= 0.0) {
            return Err(ClientError::Config("delays must be non-negative".into()));
        }
        if self.base_url.is_empty() || self.api_key_env_var.is_empty() {
            return Err(ClientError::Config("base_url and api_key_env_var are required".into()));
        }
        Ok(())
    }
}

/// Outcome of one attempt, as seen by the retry loop.
#[derive(Debug)]
pub enum Attempt<T> {
    Done(T),
    /// Worth retrying (connection failure, 5xx, 429, timeout).
    Transient { timeout: bool, message: String },
    Fatal(ClientError),
}

/// Runs `op` up to `max_retries + 1` times, sleeping `initial·2^k` between
/// attempts. `op` receives the zero-based attempt number.
pub fn retry_with_backoff<T>(
    max_retries: u32,
    initial: Duration,
    mut sleep: impl FnMut(Duration),
    mut op: impl FnMut(u32) -> Attempt<T>,
) -> Result<T, ClientError> {
    let mut attempt = 0;
    loop {
        match op(attempt) {
            Attempt::Done(v) => return Ok(v),
            Attempt::Fatal(e) => return Err(e),
            Attempt::Transient { timeout, message } => {
                if attempt >= max_retries {
                    let attempts = attempt + 1;
                    return Err(if timeout {
                        ClientError::Timeout { attempts }
                    } else {
                        ClientError::Transport { attempts, message }
                    });
                }
                sleep(initial * 2u32.saturating_pow(attempt));
                attempt += 1;
            }
        }
    }
}

/// Client for `POST {base_url}/chat/completions` with bearer auth.
pub struct HttpChatClient {
    cfg: ClientConfig,
    agent: ureq::Agent,
    last_request: Mutex<Option<Instant>>,
    log: Option<Mutex<File>>,
}

impl std::fmt::Debug for HttpChatClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpChatClient").field("cfg", &self.cfg).finish_non_exhaustive()
    }
}

#[derive(Debug, Serialize)]
struct CallRecord<'a> {
    timestamp: String,
    model: &'a str,
    attempt: u32,
    latency_ms: u128,
    status: Option<u16>,
    outcome: &'a str,
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
    total_tokens: Option<u64>,
}

impl HttpChatClient {
    /// Fails with a configuration error if the key variable is unset, before
    /// any network traffic.
    pub fn new(cfg: ClientConfig) -> Result<Self, ClientError> {
        cfg.validate()?;
        Self::api_key(&cfg)?;
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs_f64(cfg.timeout_s))
            .build();
        let log = match &cfg.call_log {
            Some(path) => Some(Mutex::new(
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| ClientError::Config(format!("call log {}: {e}", path.display())))?,
            )),
            None => None,
        };
        Ok(Self {
            cfg,
            agent,
            last_request: Mutex::new(None),
            log,
        })
    }

    pub fn config(&self) -> &ClientConfig {
        &self.cfg
    }

    fn api_key(cfg: &ClientConfig) -> Result<String, ClientError> {
        match std::env::var(&cfg.api_key_env_var) {
            Ok(v) if !v.is_empty() => Ok(v),
            _ => Err(ClientError::Config(format!(
                "environment variable {} is not set",
                cfg.api_key_env_var
            ))),
        }
    }

    /// Request body in the chat-completions shape.
    pub fn request_body(&self, history: &[ChatMessage]) -> Value {
        let messages: Vec<Value> = history
            .iter()
            .map(|m| {
                let content = if m.images.is_empty() {
                    Value::String(m.text.clone())
                } else {
                    let mut parts = vec![json!({"type": "text", "text": m.text})];
                    parts.extend(
                        m.images
                            .iter()
                            .map(|img| json!({"type": "image_url", "image_url": {"url": img.data_url()}})),
                    );
                    Value::Array(parts)
                };
                json!({"role": m.role, "content": content})
            })
            .collect();
        json!({
            "model": self.cfg.model_name,
            "temperature": self.cfg.temperature,
            "messages": messages,
        })
    }

    fn pace(&self) {
        let interval = Duration::from_secs_f64(self.cfg.min_request_interval_s);
        let mut last = self.last_request.lock().expect("rate limiter lock");
        if let Some(t) = *last {
            let since = t.elapsed();
            if since < interval {
                std::thread::sleep(interval - since);
            }
        }
        *last = Some(Instant::now());
    }

    fn record(&self, rec: &CallRecord<'_>) {
        if let Some(log) = &self.log {
            if let Ok(line) = serde_json::to_string(rec) {
                let mut f = log.lock().expect("call log lock");
                let _ = writeln!(f, "{line}");
            }
        }
    }
}

fn is_timeout(err: &ureq::Transport) -> bool {
    let mut source = std::error::Error::source(err);
    while let Some(e) = source {
        if let Some(io) = e.downcast_ref::<std::io::Error>() {
            if matches!(io.kind(), std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock) {
                return true;
            }
        }
        source = e.source();
    }
    err.to_string().contains("timed out")
}

/// Pulls the assistant text and token usage out of a response body.
pub fn parse_completion(body: &Value) -> Result<(String, Option<u64>, Option<u64>, Option<u64>), ClientError> {
    let content = body
        .pointer("/choices/0/message/content")
        .ok_or_else(|| ClientError::MalformedResponse("missing choices[0].message.content".into()))?;
    let text = match content {
        Value::String(s) => s.clone(),
        Value::Array(parts) => parts
            .iter()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect::<Vec<_>>()
            .join(""),
        other => return Err(ClientError::MalformedResponse(format!("unexpected content {other}"))),
    };
    let usage = |k: &str| body.get("usage").and_then(|u| u.get(k)).and_then(Value::as_u64);
    Ok((text, usage("prompt_tokens"), usage("completion_tokens"), usage("total_tokens")))
}

impl ChatClient for HttpChatClient {
    fn complete(&self, history: &[ChatMessage]) -> Result<String, ClientError> {
        check_history(history)?;
        let key = Self::api_key(&self.cfg)?;
        let url = format!("{}/chat/completions", self.cfg.base_url.trim_end_matches('/'));
        let body_text = self.request_body(history).to_string();
        let model = self.cfg.model_name.as_str();
        retry_with_backoff(
            self.cfg.max_retries,
            Duration::from_secs_f64(self.cfg.backoff_initial_s),
            std::thread::sleep,
            |attempt| {
                self.pace();
                let started = Instant::now();
                let result = self
                    .agent
                    .post(&url)
                    .set("Authorization", &format!("Bearer {key}"))
                    .set("Content-Type", "application/json")
                    .send_string(&body_text);
                let mut rec = CallRecord {
                    timestamp: chrono::Utc::now().to_rfc3339(),
                    model,
                    attempt,
                    latency_ms: 0,
                    status: None,
                    outcome: "ok",
                    prompt_tokens: None,
                    completion_tokens: None,
                    total_tokens: None,
                };
                let outcome = match result {
                    Ok(resp) => {
                        rec.status = Some(resp.status());
                        match resp.into_string().map_err(|e| e.to_string()).and_then(|t| serde_json::from_str::<Value>(&t).map_err(|e| e.to_string())) {
                            Ok(v) => match parse_completion(&v) {
                                Ok((text, p, c, t)) => {
                                    rec.prompt_tokens = p;
                                    rec.completion_tokens = c;
                                    rec.total_tokens = t;
                                    Attempt::Done(text)
                                }
                                Err(e) => {
                                    rec.outcome = "malformed";
                                    Attempt::Fatal(e)
                                }
                            },
                            Err(e) => {
                                rec.outcome = "malformed";
                                Attempt::Fatal(ClientError::MalformedResponse(e))
                            }
                        }
                    }
                    Err(ureq::Error::Status(code, resp)) => {
                        rec.status = Some(code);
                        match code {
                            401 | 403 => {
                                rec.outcome = "auth";
                                Attempt::Fatal(ClientError::Auth(code))
                            }
                            429 | 500..=599 => {
                                rec.outcome = "retryable_status";
                                Attempt::Transient {
                                    timeout: false,
                                    message: format!("HTTP {code}"),
                                }
                            }
                            _ => {
                                rec.outcome = "http_error";
                                let text = resp.into_string().unwrap_or_default();
                                Attempt::Fatal(ClientError::Http {
                                    status: code,
                                    body: text.chars().take(500).collect(),
                                })
                            }
                        }
                    }
                    Err(ureq::Error::Transport(t)) => {
                        let timeout = is_timeout(&t);
                        rec.outcome = if timeout { "timeout" } else { "transport" };
                        Attempt::Transient {
                            timeout,
                            message: t.kind().to_string(),
                        }
                    }
                };
                rec.latency_ms = started.elapsed().as_millis();
                self.record(&rec);
                outcome
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scripted_queue_then_exhausted() {
        let c = ScriptedClient::new(["A", "B"]);
        let h = [ChatMessage::user("go")];
        assert_eq!(c.complete(&h).unwrap(), "A");
        assert_eq!(c.complete(&h).unwrap(), "B");
        assert!(matches!(c.complete(&h), Err(ClientError::QueueExhausted)));
    }

    #[test]
    fn history_must_end_with_user() {
        let c = ScriptedClient::new(["A"]);
        let h = [ChatMessage::user("go"), ChatMessage::assistant("x")];
        assert!(matches!(c.complete(&h), Err(ClientError::Precondition(_))));
        assert!(matches!(c.complete(&[]), Err(ClientError::Precondition(_))));
        assert_eq!(c.remaining(), 1);
    }

    #[test]
    fn retry_recovers_from_two_transient_failures() {
        let mut sleeps = Vec::new();
        let out = retry_with_backoff(
            3,
            Duration::from_millis(10),
            |d| sleeps.push(d),
            |attempt| {
                if attempt < 2 {
                    Attempt::Transient {
                        timeout: false,
                        message: "reset".into(),
                    }
                } else {
                    Attempt::Done("ok")
                }
            },
        )
        .unwrap();
        assert_eq!(out, "ok");
        assert_eq!(sleeps, vec![Duration::from_millis(10), Duration::from_millis(20)]);
    }

    #[test]
    fn retry_gives_up_with_typed_errors() {
        let r: Result<(), _> = retry_with_backoff(2, Duration::ZERO, |_| {}, |_| Attempt::Transient {
            timeout: true,
            message: String::new(),
        });
        assert!(matches!(r, Err(ClientError::Timeout { attempts: 3 })));
        let r: Result<(), _> = retry_with_backoff(0, Duration::ZERO, |_| {}, |_| Attempt::Transient {
            timeout: false,
            message: "refused".into(),
        });
        assert!(matches!(r, Err(ClientError::Transport { attempts: 1, .. })));
        let mut calls = 0;
        let r: Result<(), _> = retry_with_backoff(5, Duration::ZERO, |_| {}, |_| {
            calls += 1;
            Attempt::Fatal(ClientError::Auth(401))
        });
        assert!(matches!(r, Err(ClientError::Auth(401))));
        assert_eq!(calls, 1);
    }

    #[test]
    fn reward_extraction() {
        assert_eq!(reported_reward("Actually you get a reward of -230 that"), Some(-230.0));
        assert_eq!(reported_reward("a reward of 12 now"), Some(12.0));
        assert_eq!(reported_reward("no number"), None);
    }

    #[test]
    fn angles_json_formats_whole_numbers() {
        assert_eq!(angles_json(&[0.0, 72.0, 144.5]), "{\"gantry_angles\": [0, 72, 144.5]}");
    }

    fn proposal(text: &str) -> Vec<f64> {
        let start = text.find('{').unwrap();
        let end = text.find('}').unwrap();
        let v: Value = serde_json::from_str(&text[start..=end]).unwrap();
        v["gantry_angles"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
    }

    #[test]
    fn hill_climb_starts_equally_spaced() {
        for n in [1, 3, 5, 8] {
            let c = HillClimbClient::new(7, n);
            let first = proposal(&c.complete(&[ChatMessage::user("start")]).unwrap());
            assert_eq!(first, HillClimbClient::equally_spaced(n));
        }
    }

    #[test]
    fn hill_climb_changes_one_angle_per_improving_call() {
        let c = HillClimbClient::new(3, 5);
        let mut prev = proposal(&c.complete(&[ChatMessage::user("start")]).unwrap());
        for (k, r) in (0..12).map(|k| (k, -500 + 10 * k)) {
            let msg = format!("you get a reward of {r} that you should maximize");
            let next = proposal(&c.complete(&[ChatMessage::user(msg)]).unwrap());
            let changed: Vec<usize> = (0..5).filter(|&i| prev[i] != next[i]).collect();
            assert_eq!(changed.len(), 1, "call {k}: {prev:?} -> {next:?}");
            let i = changed[0];
            let d = (next[i] - prev[i]).rem_euclid(360.0);
            assert!(d == 10.0 || d == 350.0);
            prev = next;
        }
    }

    #[test]
    fn hill_climb_reverts_after_worse_reward() {
        let c = HillClimbClient::new(5, 4);
        let p0 = proposal(&c.complete(&[ChatMessage::user("start")]).unwrap());
        let p1 = proposal(&c.complete(&[ChatMessage::user("a reward of -100")]).unwrap());
        let p2 = proposal(&c.complete(&[ChatMessage::user("a reward of -300")]).unwrap());
        // p1 scored worse than p0, so p2 is one step away from p0.
        let diff = (0..4).filter(|&i| p0[i] != p2[i]).count();
        assert_eq!(diff, 1, "{p0:?} {p1:?} {p2:?}");
    }

    #[test]
    fn hill_climb_is_seeded() {
        let run = |seed| {
            let c = HillClimbClient::new(seed, 5);
            let mut out = vec![c.complete(&[ChatMessage::user("start")]).unwrap()];
            for r in [-300, -320, -280, -290] {
                out.push(c.complete(&[ChatMessage::user(format!("a reward of {r}"))]).unwrap());
            }
            out
        };
        assert_eq!(run(11), run(11));
    }

    #[test]
    fn request_body_uses_data_urls() {
        std::env::set_var("GANTRY_UNIT_TEST_KEY", "dummy");
        let c = HttpChatClient::new(ClientConfig {
            api_key_env_var: "GANTRY_UNIT_TEST_KEY".into(),
            ..Default::default()
        })
        .unwrap();
        let body = c.request_body(&[ChatMessage::user_with_images("look", vec![ImageAttachment::png(vec![1, 2, 3])])]);
        assert_eq!(body["messages"][0]["role"], "user");
        assert_eq!(body["messages"][0]["content"][1]["image_url"]["url"], "data:image/png;base64,AQID");
        assert_eq!(body["temperature"], 0.0);
    }

    #[test]
    fn missing_key_is_config_error() {
        let r = HttpChatClient::new(ClientConfig {
            api_key_env_var: "GANTRY_SURELY_UNSET_VARIABLE".into(),
            ..Default::default()
        });
        assert!(matches!(r, Err(ClientError::Config(_))));
    }

    #[test]
    fn completion_parsing() {
        let v = json!({"choices": [{"message": {"content": "hi"}}], "usage": {"prompt_tokens": 5}});
        let (t, p, c, _) = parse_completion(&v).unwrap();
        assert_eq!((t.as_str(), p, c), ("hi", Some(5), None));
        assert!(matches!(parse_completion(&json!({"x": 1})), Err(ClientError::MalformedResponse(_))));
    }
}
