//! Record/replay layer.
//!
//! Responses are stored as `<dir>/<kind>/<digest>.json`, where the digest
//! covers only request content (never scratch paths), so a replayed run is
//! byte-identical to the recorded one.

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::{CompileOutcome, Compiler, LlmBackend, LlmError, LlmReply, LlmRequest, Verifier, VerifyOutcome};
use crate::config::MockMode;

pub struct ReplayStore {
    dir: PathBuf,
    write_lock: Mutex<()>,
}

impl ReplayStore {
    pub fn new(dir: &Path) -> Self {
        ReplayStore { dir: dir.to_path_buf(), write_lock: Mutex::new(()) }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn digest(request: &Value) -> String {
        hex::encode(Sha256::digest(request.to_string().as_bytes()))
    }

    fn path(&self, kind: &str, digest: &str) -> PathBuf {
        self.dir.join(kind).join(format!("{digest}.json"))
    }

    pub fn load<T: DeserializeOwned>(&self, kind: &str, digest: &str) -> Option<T> {
        let text = std::fs::read_to_string(self.path(kind, digest)).ok()?;
        let v: Value = serde_json::from_str(&text).ok()?;
        serde_json::from_value(v.get("response")?.clone()).ok()
    }

    /// Record a response. The stored copy of the request keeps long strings
    /// only as digests; lookups use the digest of the full request.
    pub fn store<T: Serialize>(&self, kind: &str, request: &Value, response: &T) -> std::io::Result<()> {
        let digest = Self::digest(request);
        let path = self.path(kind, &digest);
        let doc = json!({"request": abbreviate(request), "response": response});
        let text = serde_json::to_string_pretty(&doc).map_err(std::io::Error::other)? + "\n";
        let _guard = self.write_lock.lock().unwrap_or_else(|p| p.into_inner());
        let parent = path.parent().expect("store path has a parent");
        std::fs::create_dir_all(parent)?;
        let mut tmp = tempfile::NamedTempFile::new_in(parent)?;
        std::io::Write::write_all(&mut tmp, text.as_bytes())?;
        tmp.persist(&path).map_err(|e| e.error)?;
        Ok(())
    }
}

const KEEP_CHARS: usize = 120;

fn abbreviate(v: &Value) -> Value {
    match v {
        Value::String(s) if s.len() > KEEP_CHARS => {
            Value::String(format!("sha256:{} ({} bytes)", hex::encode(Sha256::digest(s.as_bytes())), s.len()))
        }
        Value::Object(m) => Value::Object(m.iter().map(|(k, v)| (k.clone(), abbreviate(v))).collect()),
        Value::Array(a) => Value::Array(a.iter().map(abbreviate).collect()),
        other => other.clone(),
    }
}

fn compile_key(source: &str) -> Value {
    json!({"kind": "compile", "source": source})
}

fn verify_key(source: &str, depth: u32) -> Value {
    json!({"kind": "verify", "source": source, "depth": depth})
}

fn llm_key(req: &LlmRequest) -> Value {
    json!({
        "kind": "llm",
        "task": req.task.as_str(),
        "prompt": req.prompt_text,
        "temperature": req.temperature,
        "sample_index": req.sample_index,
    })
}

pub struct ReplayCompiler {
    inner: Arc<dyn Compiler>,
    store: Arc<ReplayStore>,
    mode: MockMode,
}

impl ReplayCompiler {
    pub fn new(inner: Arc<dyn Compiler>, store: Arc<ReplayStore>, mode: MockMode) -> Self {
        ReplayCompiler { inner, store, mode }
    }
}

impl Compiler for ReplayCompiler {
    fn run(&self, source: &str) -> CompileOutcome {
        let key = compile_key(source);
        match self.mode {
            MockMode::Off => self.inner.run(source),
            MockMode::Replay => {
                let digest = ReplayStore::digest(&key);
                self.store
                    .load("compile", &digest)
                    .unwrap_or_else(|| CompileOutcome::tool_error(format!("replay miss: compile/{digest}")))
            }
            MockMode::Record => {
                let out = self.inner.run(source);
                if let Err(e) = self.store.store("compile", &key, &out) {
                    return CompileOutcome::tool_error(format!("cannot record: {e}"));
                }
                out
            }
        }
    }
}

pub struct ReplayVerifier {
    inner: Arc<dyn Verifier>,
    store: Arc<ReplayStore>,
    mode: MockMode,
}

impl ReplayVerifier {
    pub fn new(inner: Arc<dyn Verifier>, store: Arc<ReplayStore>, mode: MockMode) -> Self {
        ReplayVerifier { inner, store, mode }
    }
}

impl Verifier for ReplayVerifier {
    fn run(&self, source: &str, depth: u32) -> VerifyOutcome {
        let key = verify_key(source, depth);
        match self.mode {
            MockMode::Off => self.inner.run(source, depth),
            MockMode::Replay => {
                let digest = ReplayStore::digest(&key);
                self.store
                    .load("verify", &digest)
                    .unwrap_or_else(|| VerifyOutcome::tool_error(format!("replay miss: verify/{digest}")))
            }
            MockMode::Record => {
                let out = self.inner.run(source, depth);
                if let Err(e) = self.store.store("verify", &key, &out) {
                    return VerifyOutcome::tool_error(format!("cannot record: {e}"));
                }
                out
            }
        }
    }
}

pub struct ReplayLlm {
    inner: Arc<dyn LlmBackend>,
    store: Arc<ReplayStore>,
    mode: MockMode,
}

impl ReplayLlm {
    pub fn new(inner: Arc<dyn LlmBackend>, store: Arc<ReplayStore>, mode: MockMode) -> Self {
        ReplayLlm { inner, store, mode }
    }
}

impl LlmBackend for ReplayLlm {
    fn call(&self, req: &LlmRequest) -> Result<LlmReply, LlmError> {
        let key = llm_key(req);
        match self.mode {
            MockMode::Off => self.inner.call(req),
            MockMode::Replay => {
                let digest = ReplayStore::digest(&key);
                self.store.load("llm", &digest).ok_or(LlmError::ReplayMiss(digest))
            }
            MockMode::Record => {
                let reply = self.inner.call(req)?;
                self.store
                    .store("llm", &key, &reply)
                    .map_err(|e| LlmError::EndpointUnreachable(format!("cannot record: {e}")))?;
                Ok(reply)
            }
        }
    }
}
