//! LLM endpoint adapter.

use std::io::Write;
use std::process::{Command, Stdio};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::LlmBackend;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LlmTask {
    Spec,
    Bugs,
    Sva,
    Cot,
    Solve,
    /// Explanation of a compile failure.
    Analysis,
}

impl LlmTask {
    pub fn as_str(self) -> &'static str {
        match self {
            LlmTask::Spec => "spec",
            LlmTask::Bugs => "bugs",
            LlmTask::Sva => "sva",
            LlmTask::Cot => "cot",
            LlmTask::Solve => "solve",
            LlmTask::Analysis => "analysis",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub task: LlmTask,
    pub prompt_text: String,
    pub temperature: f64,
    pub max_attempts: u32,
    /// Distinguishes repeated samples of the same prompt.
    #[serde(default)]
    pub sample_index: u32,
}

impl LlmRequest {
    pub fn new(task: LlmTask, prompt_text: impl Into<String>) -> Self {
        LlmRequest { task, prompt_text: prompt_text.into(), temperature: 0.2, max_attempts: 3, sample_index: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmReply {
    pub text: String,
    pub attempt_index: u32,
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum LlmError {
    #[error("endpoint unreachable: {0}")]
    EndpointUnreachable(String),
    #[error("gave up after {attempts} attempts: {last}")]
    AttemptsExhausted { attempts: u32, last: String },
    #[error("no recorded reply for request {0}")]
    ReplayMiss(String),
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum TransportError {
    /// Worth retrying.
    #[error("transport failure: {0}")]
    Transient(String),
    /// Retrying cannot help (bad URL, unusable response).
    #[error("{0}")]
    Fatal(String),
}

/// One round trip to the endpoint.
pub trait Transport: Send + Sync {
    fn send(&self, req: &LlmRequest) -> Result<String, TransportError>;
}

/// Chat-completions request body.
pub fn build_request_body(req: &LlmRequest, model: &str) -> Value {
    json!({
        "model": model,
        "temperature": req.temperature,
        "n": 1,
        "messages": [{"role": "user", "content": req.prompt_text}],
    })
}

/// Retries transient transport failures up to `max_attempts`.
pub struct RetryingLlm<T> {
    transport: T,
}

impl<T: Transport> RetryingLlm<T> {
    pub fn new(transport: T) -> Self {
        RetryingLlm { transport }
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }
}

impl<T: Transport> LlmBackend for RetryingLlm<T> {
    fn call(&self, req: &LlmRequest) -> Result<LlmReply, LlmError> {
        let attempts = req.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 0..attempts {
            match self.transport.send(req) {
                Ok(text) => return Ok(LlmReply { text, attempt_index: attempt }),
                Err(TransportError::Fatal(e)) => return Err(LlmError::EndpointUnreachable(e)),
                Err(TransportError::Transient(e)) => last = e,
            }
        }
        Err(LlmError::AttemptsExhausted { attempts, last })
    }
}

pub struct HttpTransport {
    url: String,
    model: String,
    credential: Option<String>,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(url: &str, model: &str, credential: Option<String>, timeout_secs: u64) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        HttpTransport { url: url.to_string(), model: model.to_string(), credential, agent }
    }
}

fn reply_text(body: &str) -> Result<String, TransportError> {
    let v: Value = serde_json::from_str(body).map_err(|e| TransportError::Fatal(format!("bad response JSON: {e}")))?;
    v.pointer("/choices/0/message/content")
        .or_else(|| v.pointer("/choices/0/text"))
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| TransportError::Fatal("response carries no choices[0] content".into()))
}

impl Transport for HttpTransport {
    fn send(&self, req: &LlmRequest) -> Result<String, TransportError> {
        if !(self.url.starts_with("http://") || self.url.starts_with("https://")) {
            return Err(TransportError::Fatal(format!("unsupported endpoint URL `{}`", self.url)));
        }
        let body = build_request_body(req, &self.model).to_string();
        let mut call = self.agent.post(&self.url).header("Content-Type", "application/json");
        if let Some(token) = &self.credential {
            call = call.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = call.send(body.as_bytes()).map_err(|e| TransportError::Transient(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| TransportError::Transient(e.to_string()))?;
        match status {
            200..=299 => reply_text(&text),
            429 | 500..=599 => Err(TransportError::Transient(format!("HTTP {status}"))),
            _ => Err(TransportError::Fatal(format!("HTTP {status}: {text}"))),
        }
    }
}

/// A local program that reads the prompt on stdin and prints the reply.
/// Placeholders `{task}`, `{temperature}` and `{sample}` are expanded.
pub struct CommandLlm {
    template: String,
}

impl CommandLlm {
    pub fn new(template: &str) -> Self {
        CommandLlm { template: template.to_string() }
    }
}

impl Transport for CommandLlm {
    fn send(&self, req: &LlmRequest) -> Result<String, TransportError> {
        let argv: Vec<String> = self
            .template
            .split_whitespace()
            .map(|a| {
                a.replace("{task}", req.task.as_str())
                    .replace("{temperature}", &req.temperature.to_string())
                    .replace("{sample}", &req.sample_index.to_string())
            })
            .collect();
        let (prog, args) = argv.split_first().ok_or_else(|| TransportError::Fatal("empty llm.cmd".into()))?;
        let mut child = Command::new(prog)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| TransportError::Fatal(format!("cannot run `{prog}`: {e}")))?;
        if let Some(mut stdin) = child.stdin.take() {
            stdin.write_all(req.prompt_text.as_bytes()).map_err(|e| TransportError::Transient(e.to_string()))?;
        }
        let out = child.wait_with_output().map_err(|e| TransportError::Transient(e.to_string()))?;
        if !out.status.success() {
            return Err(TransportError::Transient(String::from_utf8_lossy(&out.stderr).into_owned()));
        }
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    }
}
