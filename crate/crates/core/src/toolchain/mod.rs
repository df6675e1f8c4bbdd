//! Adapters for the external services: a Verilog compiler, a formal
//! verifier and an LLM endpoint.
//!
//! Each service is a trait. Command-line and HTTP implementations live in
//! the submodules, together with a record/replay layer keyed by a digest of
//! the request content.

mod command;
mod llm;
mod replay;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use command::{CommandCompiler, CommandVerifier, Scratch, VerifierPatterns};
pub use llm::{
    build_request_body, CommandLlm, HttpTransport, LlmError, LlmReply, LlmRequest, LlmTask, RetryingLlm, Transport,
    TransportError,
};
pub use replay::{ReplayCompiler, ReplayLlm, ReplayStore, ReplayVerifier};

use crate::config::{MockMode, PipelineConfig};
use crate::corpus::tokenize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompileStatus {
    Ok,
    SyntaxError,
    ToolError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompileOutcome {
    pub status: CompileStatus,
    pub stderr_text: String,
}

impl CompileOutcome {
    pub fn tool_error(msg: impl Into<String>) -> Self {
        CompileOutcome { status: CompileStatus::ToolError, stderr_text: msg.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifyStatus {
    Proven,
    AssertionFailed,
    Inconclusive,
    ToolError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyOutcome {
    pub status: VerifyStatus,
    pub log_text: String,
    pub failing_step: Option<u64>,
}

impl VerifyOutcome {
    pub fn tool_error(msg: impl Into<String>) -> Self {
        VerifyOutcome { status: VerifyStatus::ToolError, log_text: msg.into(), failing_step: None }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ToolchainError {
    #[error("precondition violated: {0}")]
    Precondition(String),
}

pub trait Compiler: Send + Sync {
    fn run(&self, source: &str) -> CompileOutcome;
}

pub trait Verifier: Send + Sync {
    fn run(&self, source_with_sva: &str, depth: u32) -> VerifyOutcome;
}

pub trait LlmBackend: Send + Sync {
    fn call(&self, req: &LlmRequest) -> Result<LlmReply, LlmError>;
}

/// Syntax-check `source`.
pub fn compile_check(compiler: &dyn Compiler, source: &str) -> Result<CompileOutcome, ToolchainError> {
    if source.trim().is_empty() {
        return Err(ToolchainError::Precondition("empty source".into()));
    }
    Ok(compiler.run(source))
}

/// Bounded model check of `source_with_sva` to `depth`.
pub fn formal_verify(
    verifier: &dyn Verifier,
    source_with_sva: &str,
    depth: u32,
) -> Result<VerifyOutcome, ToolchainError> {
    if depth == 0 {
        return Err(ToolchainError::Precondition("depth must be positive".into()));
    }
    if !has_assertion(source_with_sva) {
        return Err(ToolchainError::Precondition("source contains no assertion".into()));
    }
    let mut out = verifier.run(source_with_sva, depth);
    if out.status != VerifyStatus::AssertionFailed {
        out.failing_step = None;
    }
    Ok(out)
}

pub fn llm_call(backend: &dyn LlmBackend, req: &LlmRequest) -> Result<LlmReply, LlmError> {
    backend.call(req)
}

pub fn has_assertion(source: &str) -> bool {
    tokenize(source).iter().any(|t| t.is_keyword("assert"))
}

/// Stand-in for a tool that has not been configured.
pub struct Unconfigured(pub &'static str);

impl Compiler for Unconfigured {
    fn run(&self, _: &str) -> CompileOutcome {
        CompileOutcome::tool_error(format!("{} not configured", self.0))
    }
}

impl Verifier for Unconfigured {
    fn run(&self, _: &str, _: u32) -> VerifyOutcome {
        VerifyOutcome::tool_error(format!("{} not configured", self.0))
    }
}

impl LlmBackend for Unconfigured {
    fn call(&self, _: &LlmRequest) -> Result<LlmReply, LlmError> {
        Err(LlmError::EndpointUnreachable(format!("{} not configured", self.0)))
    }
}

/// The three adapters plus the call parameters shared by every stage.
#[derive(Clone)]
pub struct Toolchain {
    pub compiler: Arc<dyn Compiler>,
    pub verifier: Arc<dyn Verifier>,
    pub llm: Arc<dyn LlmBackend>,
    pub depth: u32,
    pub temperature: f64,
    pub max_attempts: u32,
    pub verifier_configured: bool,
}

impl Toolchain {
    pub fn new(compiler: Arc<dyn Compiler>, verifier: Arc<dyn Verifier>, llm: Arc<dyn LlmBackend>) -> Self {
        Toolchain { compiler, verifier, llm, depth: 20, temperature: 0.2, max_attempts: 3, verifier_configured: true }
    }

    /// Build adapters from config, wrapping them in the replay layer when
    /// `mock.mode` asks for it.
    pub fn from_config(cfg: &PipelineConfig) -> Self {
        let scratch = Scratch::new(cfg.scratch_dir.clone(), cfg.keep_temp);
        let compiler: Arc<dyn Compiler> = match &cfg.compiler.cmd {
            Some(cmd) => Arc::new(CommandCompiler::new(cmd, scratch.clone())),
            None => Arc::new(Unconfigured("compiler")),
        };
        let verifier: Arc<dyn Verifier> = match &cfg.verifier.cmd {
            Some(cmd) => match VerifierPatterns::from_config(&cfg.verifier) {
                Ok(p) => Arc::new(CommandVerifier::new(cmd, p, scratch.clone())),
                Err(_) => Arc::new(Unconfigured("verifier")),
            },
            None => Arc::new(Unconfigured("verifier")),
        };
        let llm: Arc<dyn LlmBackend> = if let Some(url) = &cfg.llm.url {
            let credential = cfg.llm.credential_env.as_ref().and_then(|v| std::env::var(v).ok());
            Arc::new(RetryingLlm::new(HttpTransport::new(url, &cfg.llm.model, credential, cfg.llm.timeout_secs)))
        } else if let Some(cmd) = &cfg.llm.cmd {
            Arc::new(RetryingLlm::new(CommandLlm::new(cmd)))
        } else {
            Arc::new(Unconfigured("llm endpoint"))
        };
        let verifier_configured = cfg.verifier.cmd.is_some() || cfg.mock.mode == MockMode::Replay;
        let mut tc = Toolchain::new(compiler, verifier, llm);
        if let (Some(dir), mode) = (&cfg.mock.dir, cfg.mock.mode) {
            if mode != MockMode::Off {
                tc = tc.with_replay(Arc::new(ReplayStore::new(dir)), mode);
            }
        }
        tc.depth = cfg.verifier.depth;
        tc.temperature = cfg.llm.temperature;
        tc.max_attempts = cfg.llm.max_attempts;
        tc.verifier_configured = verifier_configured;
        tc
    }

    /// Wrap every adapter in the record/replay layer.
    pub fn with_replay(self, store: Arc<ReplayStore>, mode: MockMode) -> Self {
        if mode == MockMode::Off {
            return self;
        }
        Toolchain {
            compiler: Arc::new(ReplayCompiler::new(self.compiler, store.clone(), mode)),
            verifier: Arc::new(ReplayVerifier::new(self.verifier, store.clone(), mode)),
            llm: Arc::new(ReplayLlm::new(self.llm, store, mode)),
            ..self
        }
    }

    pub fn compile(&self, source: &str) -> CompileOutcome {
        compile_check(self.compiler.as_ref(), source).unwrap_or_else(|e| CompileOutcome::tool_error(e.to_string()))
    }

    pub fn verify(&self, source_with_sva: &str) -> Result<VerifyOutcome, ToolchainError> {
        formal_verify(self.verifier.as_ref(), source_with_sva, self.depth)
    }

    pub fn request(&self, task: LlmTask, prompt: impl Into<String>) -> LlmRequest {
        LlmRequest {
            task,
            prompt_text: prompt.into(),
            temperature: self.temperature,
            max_attempts: self.max_attempts,
            sample_index: 0,
        }
    }

    pub fn ask(&self, req: &LlmRequest) -> Result<LlmReply, LlmError> {
        llm_call(self.llm.as_ref(), req)
    }
}
