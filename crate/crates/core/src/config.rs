//! Pipeline configuration, loaded from TOML.
//!
//! Relative paths are resolved against the directory holding the config
//! file. The LLM credential is never stored here, only the name of the
//! environment variable that carries it.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockMode {
    #[default]
    Off,
    Record,
    Replay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeMode {
    #[default]
    Textual,
    Reverify,
    Both,
}

impl std::str::FromStr for JudgeMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "textual" => Ok(JudgeMode::Textual),
            "reverify" => Ok(JudgeMode::Reverify),
            "both" => Ok(JudgeMode::Both),
            other => Err(format!("unknown judge mode `{other}` (textual|reverify|both)")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompilerConfig {
    /// Command template; `{file}` is replaced by the design path.
    pub cmd: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifierConfig {
    /// Command template; placeholders `{file}`, `{depth}`, `{top}`, `{dir}`, `{sby}`.
    pub cmd: Option<String>,
    pub depth: u32,
    pub fail_pattern: String,
    pub pass_pattern: String,
    pub unknown_pattern: String,
    pub step_pattern: String,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        VerifierConfig {
            cmd: None,
            depth: 20,
            fail_pattern: r"\bFAIL(ED)?\b".into(),
            pass_pattern: r"\bPASS(ED)?\b".into(),
            unknown_pattern: r"\bUNKNOWN\b".into(),
            step_pattern: r"(?i)\bstep\s+(\d+)".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    /// Chat-completions style endpoint.
    pub url: Option<String>,
    /// Name of the environment variable holding the bearer token.
    pub credential_env: Option<String>,
    /// Alternative to `url`: a local command reading the prompt on stdin.
    pub cmd: Option<String>,
    pub model: String,
    pub temperature: f64,
    pub max_attempts: u32,
    pub timeout_secs: u64,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            url: None,
            credential_env: None,
            cmd: None,
            model: "default".into(),
            temperature: 0.2,
            max_attempts: 3,
            timeout_secs: 120,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockConfig {
    pub dir: Option<PathBuf>,
    pub mode: MockMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub n: usize,
    pub ks: Vec<usize>,
    pub mode: JudgeMode,
    pub line_only: bool,
    pub max_rounds: usize,
    pub parallel: usize,
    /// Suffixes appended to the solve prompt after invalid replies; the
    /// i-th invalid reply selects entry `min(i, len) - 1`.
    pub retry_templates: Vec<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n: 20,
            ks: vec![1, 5],
            mode: JudgeMode::Textual,
            line_only: false,
            max_rounds: 60,
            parallel: 4,
            retry_templates: vec![
                "Your previous reply was not valid JSON. Reply with one JSON object only.".into(),
                "Reply with exactly {\"buggy_line\": \"...\", \"fix\": \"...\", \"cot\": \"...\"} and nothing else."
                    .into(),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub corpus_dir: PathBuf,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub split_fraction: f64,
    /// Mutations drawn per accepted unit.
    pub mutations_per_unit: usize,
    /// Assertions requested per unit.
    pub assertions_per_unit: usize,
    /// Also ask the LLM for bugs (in addition to the rule-based engine).
    pub llm_bugs: bool,
    pub keep_temp: bool,
    pub scratch_dir: Option<PathBuf>,
    pub parallel: usize,
    pub compiler: CompilerConfig,
    pub verifier: VerifierConfig,
    pub llm: LlmConfig,
    pub mock: MockConfig,
    pub eval: EvalConfig,
    /// Digest of the config file bytes; filled by [`PipelineConfig::load`].
    #[serde(skip)]
    pub digest: String,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            corpus_dir: PathBuf::from("corpus"),
            out_dir: PathBuf::from("out"),
            seed: 0,
            split_fraction: 0.9,
            mutations_per_unit: 4,
            assertions_per_unit: 2,
            llm_bugs: false,
            keep_temp: false,
            scratch_dir: None,
            parallel: 4,
            compiler: CompilerConfig::default(),
            verifier: VerifierConfig::default(),
            llm: LlmConfig::default(),
            mock: MockConfig::default(),
            eval: EvalConfig::default(),
            digest: digest_bytes(b""),
        }
    }
}

fn digest_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let mut cfg: PipelineConfig = toml::from_str(text)?;
        cfg.digest = digest_bytes(text.as_bytes());
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.corpus_dir);
        fix(&mut self.out_dir);
        if let Some(d) = self.mock.dir.as_mut() {
            fix(d);
        }
        if let Some(d) = self.scratch_dir.as_mut() {
            fix(d);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(ConfigError::Invalid(format!("split_fraction {} not in (0,1)", self.split_fraction)));
        }
        let e = &self.eval;
        if e.ks.is_empty() || e.ks.contains(&0) {
            return Err(ConfigError::Invalid("eval.ks must be non-empty positive integers".into()));
        }
        if e.n < *e.ks.iter().max().unwrap() {
            return Err(ConfigError::Invalid(format!("eval.n = {} is smaller than max(ks)", e.n)));
        }
        if !(0.0..=2.0).contains(&self.llm.temperature) {
            return Err(ConfigError::Invalid("llm.temperature must lie in [0,2]".into()));
        }
        if self.llm.max_attempts == 0 {
            return Err(ConfigError::Invalid("llm.max_attempts must be positive".into()));
        }
        if self.verifier.depth == 0 {
            return Err(ConfigError::Invalid("verifier.depth must be positive".into()));
        }
        if self.mock.mode != MockMode::Off && self.mock.dir.is_none() {
            return Err(ConfigError::Invalid("mock.mode requires mock.dir".into()));
        }
        for p in [
            &self.verifier.fail_pattern,
            &self.verifier.pass_pattern,
            &self.verifier.unknown_pattern,
            &self.verifier.step_pattern,
        ] {
            regex::Regex::new(p).map_err(|e| ConfigError::Invalid(format!("bad verifier pattern: {e}")))?;
        }
        Ok(())
    }
}
