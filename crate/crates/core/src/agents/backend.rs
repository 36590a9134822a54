use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::sync::{mpsc, Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::solver::ResourceLimits;

use super::{AgentError, AgentResponse, AgentRole, TokenUsage};

#[derive(Debug, Clone, PartialEq)]
pub struct Reply {
    pub text: String,
    pub usage: TokenUsage,
}

/// Anything that can answer a prompt. Implementations must tolerate calls
/// from several sessions at once.
pub trait ChatBackend: Send + Sync {
    fn id(&self) -> String;
    /// `channel` names the queue or persona: a role name or `coordinator`.
    fn complete(&self, channel: &str, prompt: &str, timeout: Duration) -> Result<Reply, AgentError>;
}

pub type AgentBackend = Arc<dyn ChatBackend>;

/// Sends `prompt` and waits at most `limits.wall_clock_seconds` for the answer.
pub fn invoke_agent(
    role: AgentRole,
    prompt: &str,
    backend: &AgentBackend,
    limits: &ResourceLimits,
) -> Result<AgentResponse, AgentError> {
    invoke_channel(role.as_str(), prompt, backend, limits)
}

/// [`invoke_agent`] for an arbitrary channel name.
pub fn invoke_channel(
    channel: &str,
    prompt: &str,
    backend: &AgentBackend,
    limits: &ResourceLimits,
) -> Result<AgentResponse, AgentError> {
    if limits.validate().is_err() {
        return Err(AgentError::Config(format!("invalid limits {limits:?}")));
    }
    let started = Instant::now();
    let timeout = limits.wall_clock();
    let (tx, rx) = mpsc::channel();
    let worker = Arc::clone(backend);
    let prompt = prompt.to_string();
    let channel = channel.to_string();
    // A backend still running at the deadline is abandoned; its answer is dropped.
    thread::spawn(move || {
        let _ = tx.send(worker.complete(&channel, &prompt, timeout));
    });
    let reply = rx.recv_timeout(timeout).map_err(|_| AgentError::Timeout(limits.wall_clock_seconds))??;
    Ok(AgentResponse {
        text: reply.text,
        usage: reply.usage,
        elapsed_seconds: started.elapsed().as_secs_f64(),
        backend_id: backend.id(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnBody {
    Text(String),
    /// Path of a file holding the reply, relative to the configuration file.
    File(String),
    /// Fails the invocation with this message, e.g. `RuntimeError: boom`.
    Fault(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedTurn {
    #[serde(flatten)]
    pub body: TurnBody,
    #[serde(default)]
    pub usage: TokenUsage,
    #[serde(default)]
    pub delay_seconds: f64,
}

impl ScriptedTurn {
    pub fn text(text: impl Into<String>) -> Self {
        Self { body: TurnBody::Text(text.into()), usage: TokenUsage::default(), delay_seconds: 0.0 }
    }

    pub fn fault(message: impl Into<String>) -> Self {
        Self { body: TurnBody::Fault(message.into()), usage: TokenUsage::default(), delay_seconds: 0.0 }
    }

    pub fn with_usage(mut self, input_tokens: u64, output_tokens: u64) -> Self {
        self.usage = TokenUsage { input_tokens, output_tokens };
        self
    }

    pub fn with_delay(mut self, seconds: f64) -> Self {
        self.delay_seconds = seconds;
        self
    }
}

/// Replays queued replies per role, in order.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    queues: Mutex<HashMap<String, VecDeque<ScriptedTurn>>>,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&self, channel: &str, turn: ScriptedTurn) {
        self.queues.lock().expect("queue lock").entry(channel.to_string()).or_default().push_back(turn);
    }

    pub fn remaining(&self, channel: &str) -> usize {
        self.queues.lock().expect("queue lock").get(channel).map_or(0, VecDeque::len)
    }
}

impl ChatBackend for ScriptedBackend {
    fn id(&self) -> String {
        "scripted".into()
    }

    fn complete(&self, channel: &str, _prompt: &str, _timeout: Duration) -> Result<Reply, AgentError> {
        let turn = self
            .queues
            .lock()
            .expect("queue lock")
            .get_mut(channel)
            .and_then(VecDeque::pop_front)
            .ok_or_else(|| AgentError::ScriptExhausted(channel.to_string()))?;
        if turn.delay_seconds > 0.0 {
            thread::sleep(Duration::from_secs_f64(turn.delay_seconds));
        }
        match turn.body {
            TurnBody::Text(text) => Ok(Reply { text, usage: turn.usage }),
            TurnBody::File(path) => std::fs::read_to_string(&path)
                .map(|text| Reply { text, usage: turn.usage })
                .map_err(|e| AgentError::Config(format!("cannot read scripted reply {path}: {e}"))),
            TurnBody::Fault(message) => Err(AgentError::Fault(message)),
        }
    }
}

const RETRY_BACKOFF: [Duration; 2] = [Duration::from_secs(1), Duration::from_secs(2)];

/// One chat-completion exchange per call against an OpenAI-style endpoint.
pub struct RemoteBackend {
    base_url: String,
    model: String,
    api_key: Option<String>,
}

impl RemoteBackend {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>, api_key: Option<String>) -> Self {
        Self { base_url: base_url.into(), model: model.into(), api_key }
    }

    fn exchange(&self, body: &Value, timeout: Duration) -> Result<Reply, AgentError> {
        let agent: ureq::Agent =
            ureq::Agent::config_builder().timeout_global(Some(timeout)).http_status_as_error(false).build().into();
        let url = format!("{}/chat/completions", self.base_url.trim_end_matches('/'));
        let mut req = agent.post(&url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(body)
            .map_err(|e| AgentError::RemoteFailure { message: e.to_string(), retriable: true })?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| AgentError::RemoteFailure { message: e.to_string(), retriable: true })?;
        if !(200..300).contains(&status) {
            let retriable = status == 429 || status >= 500;
            return Err(AgentError::RemoteFailure { message: format!("HTTP {status}: {text}"), retriable });
        }
        parse_completion(&text)
    }
}

fn parse_completion(text: &str) -> Result<Reply, AgentError> {
    let bad = |what: &str| AgentError::RemoteFailure { message: format!("malformed completion: {what}"), retriable: false };
    let v: Value = serde_json::from_str(text).map_err(|e| bad(&e.to_string()))?;
    let content = v
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| bad("no choices[0].message.content"))?;
    let tokens = |k: &str| v.pointer(&format!("/usage/{k}")).and_then(Value::as_u64).unwrap_or(0);
    Ok(Reply {
        text: content.to_string(),
        usage: TokenUsage { input_tokens: tokens("prompt_tokens"), output_tokens: tokens("completion_tokens") },
    })
}

impl ChatBackend for RemoteBackend {
    fn id(&self) -> String {
        format!("remote:{}", self.model)
    }

    fn complete(&self, _channel: &str, prompt: &str, timeout: Duration) -> Result<Reply, AgentError> {
        let body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
        });
        let mut attempt = 0;
        loop {
            match self.exchange(&body, timeout) {
                Err(AgentError::RemoteFailure { retriable: true, .. }) if attempt < RETRY_BACKOFF.len() => {
                    thread::sleep(RETRY_BACKOFF[attempt]);
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

/// Backend settings as written in a session configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    Scripted {
        #[serde(default)]
        turns: Vec<ScriptedTurn>,
    },
    Remote {
        base_url: String,
        model: String,
        /// Name of the environment variable holding the API key.
        #[serde(default)]
        credentials_env: Option<String>,
    },
}

impl BackendConfig {
    /// Builds the backend serving `channel`; relative reply files resolve against `base_dir`.
    pub fn build(&self, channel: &str, base_dir: &Path) -> Result<AgentBackend, AgentError> {
        match self {
            BackendConfig::Scripted { turns } => {
                let b = ScriptedBackend::new();
                for t in turns {
                    let mut t = t.clone();
                    if let TurnBody::File(p) = &t.body {
                        t.body = TurnBody::File(base_dir.join(p).to_string_lossy().into_owned());
                    }
                    b.push(channel, t);
                }
                Ok(Arc::new(b))
            }
            BackendConfig::Remote { base_url, model, credentials_env } => {
                let api_key = match credentials_env {
                    Some(var) => Some(
                        std::env::var(var)
                            .map_err(|_| AgentError::Config(format!("environment variable {var} is not set")))?,
                    ),
                    None => None,
                };
                Ok(Arc::new(RemoteBackend::new(base_url, model, api_key)))
            }
        }
    }

    pub fn model_name(&self) -> Option<&str> {
        match self {
            BackendConfig::Remote { model, .. } => Some(model),
            BackendConfig::Scripted { .. } => None,
        }
    }
}
