//! Subprocess-backed compiler and verifier.

use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use regex::Regex;

use super::{CompileOutcome, CompileStatus, Compiler, Verifier, VerifyOutcome, VerifyStatus};
use crate::config::VerifierConfig;
use crate::corpus::{tokenize, TokenKind};

/// Where adapters may write. Each call gets a fresh subdirectory which is
/// removed afterwards unless `keep` is set.
#[derive(Debug, Clone, Default)]
pub struct Scratch {
    base: Option<PathBuf>,
    keep: bool,
}

impl Scratch {
    pub fn new(base: Option<PathBuf>, keep: bool) -> Self {
        Scratch { base, keep }
    }

    fn dir(&self) -> std::io::Result<tempfile::TempDir> {
        let mut b = tempfile::Builder::new();
        b.prefix("assertforge-");
        let mut dir = match &self.base {
            Some(base) => {
                std::fs::create_dir_all(base)?;
                b.tempdir_in(base)?
            }
            None => b.tempdir()?,
        };
        dir.disable_cleanup(self.keep);
        Ok(dir)
    }
}

/// Expand a whitespace-separated command template.
fn expand(template: &str, vars: &[(&str, String)]) -> Vec<String> {
    template
        .split_whitespace()
        .map(|arg| vars.iter().fold(arg.to_string(), |a, (k, v)| a.replace(&format!("{{{k}}}"), v)))
        .collect()
}

struct RunOutput {
    success: bool,
    stdout: String,
    stderr: String,
}

fn run(argv: &[String], cwd: &Path) -> Result<RunOutput, String> {
    let (prog, args) = argv.split_first().ok_or("empty command template")?;
    let out = Command::new(prog)
        .args(args)
        .current_dir(cwd)
        .stdin(Stdio::null())
        .output()
        .map_err(|e| format!("cannot run `{prog}`: {e}"))?;
    Ok(RunOutput {
        success: out.status.success(),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    })
}

fn first_module(source: &str) -> String {
    let toks = tokenize(source);
    let mut code = toks.iter().filter(|t| !t.is_trivia());
    while let Some(t) = code.next() {
        if t.is_keyword("module") {
            if let Some(n) = code.next().filter(|n| n.kind == TokenKind::Identifier) {
                return n.text.clone();
            }
        }
    }
    "top".into()
}

pub struct CommandCompiler {
    template: String,
    scratch: Scratch,
}

impl CommandCompiler {
    pub fn new(template: &str, scratch: Scratch) -> Self {
        CommandCompiler { template: template.to_string(), scratch }
    }
}

impl Compiler for CommandCompiler {
    fn run(&self, source: &str) -> CompileOutcome {
        let dir = match self.scratch.dir() {
            Ok(d) => d,
            Err(e) => return CompileOutcome::tool_error(format!("scratch dir: {e}")),
        };
        let file = dir.path().join("design.sv");
        if let Err(e) = std::fs::write(&file, source) {
            return CompileOutcome::tool_error(format!("write {}: {e}", file.display()));
        }
        let argv = expand(
            &self.template,
            &[
                ("file", file.display().to_string()),
                ("dir", dir.path().display().to_string()),
                ("top", first_module(source)),
            ],
        );
        match run(&argv, dir.path()) {
            Err(e) => CompileOutcome::tool_error(e),
            Ok(o) if o.success => CompileOutcome { status: CompileStatus::Ok, stderr_text: String::new() },
            Ok(o) => {
                let diag = format!("{}{}", o.stderr, o.stdout);
                if diag.trim().is_empty() {
                    CompileOutcome::tool_error("compiler failed without diagnostics")
                } else {
                    CompileOutcome { status: CompileStatus::SyntaxError, stderr_text: diag }
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct VerifierPatterns {
    pub fail: Regex,
    pub pass: Regex,
    pub unknown: Regex,
    pub step: Regex,
}

impl VerifierPatterns {
    pub fn from_config(c: &VerifierConfig) -> Result<Self, regex::Error> {
        Ok(VerifierPatterns {
            fail: Regex::new(&c.fail_pattern)?,
            pass: Regex::new(&c.pass_pattern)?,
            unknown: Regex::new(&c.unknown_pattern)?,
            step: Regex::new(&c.step_pattern)?,
        })
    }

    /// Map verifier output to a verdict. A failure report wins over a pass
    /// report; the last step number in the log is the failing step.
    pub fn classify(&self, log: &str, exit_ok: bool) -> (VerifyStatus, Option<u64>) {
        if self.fail.is_match(log) {
            let step =
                self.step.captures_iter(log).filter_map(|c| c.get(1).and_then(|m| m.as_str().parse().ok())).last();
            (VerifyStatus::AssertionFailed, step)
        } else if self.pass.is_match(log) {
            (VerifyStatus::Proven, None)
        } else if self.unknown.is_match(log) || exit_ok {
            (VerifyStatus::Inconclusive, None)
        } else {
            (VerifyStatus::ToolError, None)
        }
    }
}

impl Default for VerifierPatterns {
    fn default() -> Self {
        Self::from_config(&VerifierConfig::default()).expect("default patterns compile")
    }
}

pub struct CommandVerifier {
    template: String,
    patterns: VerifierPatterns,
    scratch: Scratch,
}

impl CommandVerifier {
    pub fn new(template: &str, patterns: VerifierPatterns, scratch: Scratch) -> Self {
        CommandVerifier { template: template.to_string(), patterns, scratch }
    }
}

fn sby_file(top: &str, depth: u32) -> String {
    format!(
        "[options]\nmode bmc\ndepth {depth}\n\n[engines]\nsmtbmc\n\n[script]\nread -formal design.sv\nprep -top {top}\n\n[files]\ndesign.sv\n"
    )
}

impl Verifier for CommandVerifier {
    fn run(&self, source_with_sva: &str, depth: u32) -> VerifyOutcome {
        let dir = match self.scratch.dir() {
            Ok(d) => d,
            Err(e) => return VerifyOutcome::tool_error(format!("scratch dir: {e}")),
        };
        let file = dir.path().join("design.sv");
        let top = first_module(source_with_sva);
        let sby = dir.path().join("check.sby");
        let written = std::fs::write(&file, source_with_sva).and_then(|_| std::fs::write(&sby, sby_file(&top, depth)));
        if let Err(e) = written {
            return VerifyOutcome::tool_error(format!("write scratch files: {e}"));
        }
        let argv = expand(
            &self.template,
            &[
                ("file", file.display().to_string()),
                ("depth", depth.to_string()),
                ("top", top),
                ("dir", dir.path().display().to_string()),
                ("sby", sby.display().to_string()),
            ],
        );
        match run(&argv, dir.path()) {
            Err(e) => VerifyOutcome::tool_error(e),
            Ok(o) => {
                let log = format!("{}{}", o.stdout, o.stderr);
                let (status, failing_step) = self.patterns.classify(&log, o.success);
                VerifyOutcome { status, log_text: log, failing_step }
            }
        }
    }
}
