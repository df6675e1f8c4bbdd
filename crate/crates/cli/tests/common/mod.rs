//! Shared test support: deterministic scripted adapters, fixture
//! regeneration and the hermetic pipeline runner.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;

use assertforge::config::MockMode;
use assertforge::corpus::{filter_units, load_dir, tokenize, SourceUnit, TokenKind};
use assertforge::dataset::read_jsonl;
use assertforge::eval::{evaluate_cases, CollectOptions, JudgeOptions};
use assertforge::mutate::{extract_referenced_signals, MutationEngine};
use assertforge::pipeline::{augment, AugmentOptions};
use assertforge::toolchain::{
    has_assertion, CompileOutcome, CompileStatus, Compiler, LlmBackend, LlmError, LlmReply, LlmRequest, LlmTask,
    ReplayStore, Toolchain, Verifier, VerifyOutcome, VerifyStatus,
};
use assertforge::{EvalCase, PipelineConfig};

pub const REGEN_VAR: &str = "ASSERTFORGE_REGEN_FIXTURES";

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures")
}

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_assertforge")
}

pub fn fnv(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(*b)).wrapping_mul(0x0100_0000_01b3))
}

fn fenced<'a>(text: &'a str, open: &str) -> Option<&'a str> {
    let start = text.find(open)? + open.len();
    let end = text[start..].find("```")? + start;
    Some(&text[start..end])
}

fn code_lines(src: &str) -> Vec<&str> {
    src.split('\n').filter(|l| !has_assertion(l)).collect()
}

// ---------------------------------------------------------------------------
// Scripted adapters

/// First file wins when several define the same module.
fn originals_by_module(units: &[SourceUnit]) -> HashMap<String, SourceUnit> {
    let mut map = HashMap::new();
    for u in units {
        if let Some(name) = u.module_names.first() {
            map.entry(name.clone()).or_insert_with(|| u.clone());
        }
    }
    map
}

/// Compiler that checks bracket and block balance.
pub struct ScriptedCompiler;

impl Compiler for ScriptedCompiler {
    fn run(&self, source: &str) -> CompileOutcome {
        let pairs =
            [("(", ")"), ("[", "]"), ("{", "}"), ("begin", "end"), ("case", "endcase"), ("module", "endmodule")];
        let mut stack: Vec<(&str, usize)> = Vec::new();
        let mut line = 1;
        for t in tokenize(source) {
            line += t.text.matches('\n').count();
            if t.kind == TokenKind::Comment || t.kind == TokenKind::Whitespace {
                continue;
            }
            if let Some((open, _)) = pairs.iter().find(|(o, _)| *o == t.text) {
                stack.push((open, line));
            } else if let Some((open, close)) = pairs.iter().find(|(_, c)| *c == t.text) {
                match stack.pop() {
                    Some((o, _)) if o == *open => {}
                    _ => {
                        return CompileOutcome {
                            status: CompileStatus::SyntaxError,
                            stderr_text: format!("design.v:{line}: syntax error, unexpected `{close}`\n"),
                        }
                    }
                }
            }
        }
        match stack.pop() {
            None => CompileOutcome { status: CompileStatus::Ok, stderr_text: String::new() },
            Some((open, l)) => CompileOutcome {
                status: CompileStatus::SyntaxError,
                stderr_text: format!("design.v:{l}: syntax error, `{open}` is never closed\n"),
            },
        }
    }
}

/// Knows the original designs and reports an assertion failure for
/// single-line changes according to a fixed rule.
pub struct ScriptedVerifier {
    originals: HashMap<String, SourceUnit>,
}

fn sby_log(top: &str, sva_line: usize, status: VerifyStatus, step: u32) -> String {
    let mut out = vec![format!("SBY  {top}: engine_0: smtbmc boolector")];
    for s in 0..=step {
        out.push(format!("SBY  {top}: engine_0.basecase: Checking assertions in step {s}.."));
    }
    match status {
        VerifyStatus::AssertionFailed => {
            out.push(format!("SBY  {top}: engine_0.basecase: BMC failed!"));
            out.push(format!(
                "SBY  {top}: engine_0.basecase: Assert failed in {top}: design.sv:{sva_line}.3-{sva_line}.70"
            ));
            out.push(format!("SBY  {top}: engine_0.basecase: Writing trace to VCD file: engine_0/trace.vcd"));
            out.push(format!("SBY  {top}: summary: engine_0 (smtbmc) returned FAIL"));
            out.push(format!("SBY  {top}: DONE (FAIL, rc=2)"));
        }
        VerifyStatus::Proven => {
            out.push(format!("SBY  {top}: summary: engine_0 (smtbmc) returned PASS"));
            out.push(format!("SBY  {top}: DONE (PASS, rc=0)"));
        }
        _ => {
            out.push(format!("SBY  {top}: engine_0.induction: solver timeout"));
            out.push(format!("SBY  {top}: DONE (UNKNOWN, rc=4)"));
        }
    }
    out.join("\n") + "\n"
}

impl ScriptedVerifier {
    pub fn new(units: &[SourceUnit]) -> Self {
        let originals = originals_by_module(units);
        ScriptedVerifier { originals }
    }
}

impl Verifier for ScriptedVerifier {
    fn run(&self, source: &str, depth: u32) -> VerifyOutcome {
        let probe = SourceUnit::new("probe", "probe", source);
        let Some(top) = probe.module_names.first() else { return VerifyOutcome::tool_error("no module") };
        let Some(orig) = self.originals.get(top) else { return VerifyOutcome::tool_error("unknown design") };
        let lines: Vec<&str> = source.split('\n').collect();
        let Some(sva_idx) = lines.iter().position(|l| has_assertion(l)) else {
            return VerifyOutcome::tool_error("no assertion");
        };
        let sva = lines[sva_idx].trim();
        let done = |status, step: u32| VerifyOutcome {
            status,
            log_text: sby_log(top, sva_idx + 1, status, step),
            failing_step: (status == VerifyStatus::AssertionFailed).then_some(u64::from(step)),
        };
        if sva.contains("1'b0)") {
            return done(VerifyStatus::AssertionFailed, 0);
        }
        let now = code_lines(source);
        let before = code_lines(&orig.text);
        if now.len() != before.len() {
            return VerifyOutcome::tool_error("design shape changed");
        }
        let diffs: Vec<usize> = (0..now.len()).filter(|&i| now[i] != before[i]).collect();
        match diffs.as_slice() {
            [] => done(VerifyStatus::Proven, depth.min(3)),
            [i] => {
                let Ok(rec) = MutationEngine::new(orig).record_for_replacement(i + 1, now[*i], 0) else {
                    return VerifyOutcome::tool_error("cannot classify change");
                };
                let signals = extract_referenced_signals(sva).unwrap_or_default();
                let direct = rec.lhs_targets.iter().any(|t| signals.contains(t));
                let h = fnv(now[*i].as_bytes());
                let step = 1 + (h / 10 % u64::from(depth.clamp(1, 8))) as u32;
                if direct || h % 10 < 6 {
                    done(VerifyStatus::AssertionFailed, step)
                } else if h % 10 < 9 {
                    done(VerifyStatus::Proven, depth.min(3))
                } else {
                    done(VerifyStatus::Inconclusive, depth.min(3))
                }
            }
            _ => VerifyOutcome::tool_error("more than one line changed"),
        }
    }
}

/// Language model stand-in: specifications and assertions from the code,
/// answers from the known originals with a fixed error pattern.
pub struct ScriptedLlm {
    originals: HashMap<String, SourceUnit>,
    answers: HashMap<String, (String, String)>,
}

impl ScriptedLlm {
    pub fn new(units: &[SourceUnit], cases: &[EvalCase]) -> Self {
        let originals = originals_by_module(units);
        let answers = cases
            .iter()
            .map(|c| (c.buggy_sv_code.clone(), (c.golden_buggy_line.clone(), c.golden_corrected_line.clone())))
            .collect();
        ScriptedLlm { originals, answers }
    }

    fn golden(&self, code: &str) -> Option<(String, String)> {
        if let Some(a) = self.answers.get(code) {
            return Some(a.clone());
        }
        let probe = SourceUnit::new("probe", "probe", code);
        let orig = self.originals.get(probe.module_names.first()?)?;
        let now = code_lines(code);
        let before = code_lines(&orig.text);
        let i = (0..now.len().min(before.len())).find(|&i| now[i] != before[i])?;
        Some((now[i].trim().to_string(), before[i].trim().to_string()))
    }

    fn assigned(code: &str) -> Vec<String> {
        let mut names = Vec::new();
        for line in code.lines() {
            let t = line.trim();
            let t = t.strip_prefix("assign ").unwrap_or(t);
            let case_item = t.starts_with("default") || t.starts_with(|c: char| c.is_ascii_digit());
            let t = if case_item { t.split_once(':').map_or(t, |(_, r)| r).trim() } else { t };
            if let Some(pos) = t.find("<=").or_else(|| t.find(" = ")) {
                let name = t[..pos].trim();
                if !name.is_empty()
                    && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
                    && !names.iter().any(|n| n == name)
                {
                    names.push(name.to_string());
                }
            }
        }
        names
    }

    fn answer(&self, code: &str, variant: u64, fence: bool) -> String {
        let Some((buggy, fix)) = self.golden(code) else {
            return "I could not locate the defect in this design.".into();
        };
        let lines: Vec<&str> = code.lines().map(str::trim).filter(|l| !l.is_empty() && !has_assertion(l)).collect();
        let pos = lines.iter().position(|l| *l == buggy).unwrap_or(0);
        let other = lines.get(pos + 1).or(lines.get(pos.saturating_sub(1))).copied().unwrap_or("end");
        let (b, f, why) = match variant {
            0 => (buggy.clone(), fix.clone(), format!("The failing assertion depends on the value written by `{buggy}`. Comparing it with the specification, the line should read `{fix}`.")),
            1 => (buggy.clone(), buggy.clone(), format!("The trace points at `{buggy}`, which looks suspicious, but the statement matches the intent.")),
            2 => (other.to_string(), other.to_string(), format!("The counterexample first diverges at `{other}`.")),
            _ => (buggy.clone(), format!("{} ^ 1;", fix.trim_end_matches(';')), format!("Line `{buggy}` is wrong; invert its low bit.")),
        };
        let obj = serde_json::json!({"buggy_line": b, "fix": f, "cot": format!("Step 1: read the failing assertion in the log. Step 2: trace its signals back. Step 3: {why}")});
        if fence {
            format!("Here is my analysis.\n```json\n{obj}\n```")
        } else {
            obj.to_string()
        }
    }
}

impl LlmBackend for ScriptedLlm {
    fn call(&self, req: &LlmRequest) -> Result<LlmReply, LlmError> {
        let p = &req.prompt_text;
        let text = match req.task {
            LlmTask::Spec => {
                let code = fenced(p, "```verilog\n").unwrap_or("");
                let probe = SourceUnit::new("probe", "probe", code);
                let top = probe.module_names.first().cloned().unwrap_or_else(|| "design".into());
                let regs = Self::assigned(code);
                format!(
                    "Module `{top}` is a synchronous datapath clocked by `clk` with synchronous reset `rst`. \
                     It computes {} internal values from `in_a` and `in_b` under control of `en` and `sel`, \
                     and drives `dout` from them.",
                    regs.len()
                )
            }
            LlmTask::Analysis => {
                let diag = fenced(p, "Compiler output:\n```\n").unwrap_or("").trim();
                format!("The compiler stops with `{diag}`. The construct it names is opened but not closed, so every later declaration is misparsed. Close it at the end of the statement it belongs to.")
            }
            LlmTask::Sva => {
                let code = fenced(p, "```verilog\n").unwrap_or("");
                let names: Vec<String> = Self::assigned(code).into_iter().filter(|n| n != "dout").collect();
                let h = fnv(code.as_bytes());
                let pick = |k: u64| {
                    names.get((k % names.len().max(1) as u64) as usize).cloned().unwrap_or_else(|| "dout".into())
                };
                let first =
                    format!("assert property (@(posedge clk) disable iff (rst) !$isunknown({{dout, {}}}));", pick(h));
                let second = if h.is_multiple_of(4) {
                    "assert property (@(posedge clk) 1'b0);".to_string()
                } else {
                    format!(
                        "assert property (@(posedge clk) disable iff (rst) en |-> ##1 !$isunknown({}));",
                        pick(h / 7)
                    )
                };
                format!("Here are the assertions:\n```systemverilog\n1. {first}\n2. {second}\n```")
            }
            LlmTask::Cot => {
                let code = fenced(p, "```systemverilog\n").unwrap_or("");
                match fnv(code.as_bytes()) % 10 {
                    0 => self.answer(code, 2, false),
                    1 => "The design is fine; the assertion is too strict.".into(),
                    _ => self.answer(code, 0, false),
                }
            }
            LlmTask::Solve => {
                let code = fenced(p, "```systemverilog\n").unwrap_or("");
                let rate = fnv(code.as_bytes()) % 6;
                let s = fnv(format!("{code}#{}", req.sample_index).as_bytes());
                if s.is_multiple_of(11) {
                    "Looking at the log, the counterexample shows the register taking the wrong value.".into()
                } else if (s / 11) % 5 < rate {
                    self.answer(code, 0, s % 2 == 1)
                } else {
                    self.answer(code, 1 + (s / 55) % 3, s % 2 == 1)
                }
            }
            LlmTask::Bugs => "[]".into(),
        };
        Ok(LlmReply { text, attempt_index: 0 })
    }
}

// ---------------------------------------------------------------------------
// Pipeline driving

pub struct Step {
    pub args: Vec<String>,
    pub code: Option<i32>,
    pub stdout: String,
    pub stderr: String,
}

pub fn run_cli(args: &[String]) -> Step {
    let out = Command::new(bin()).args(args).output().expect("binary runs");
    Step {
        args: args.to_vec(),
        code: out.status.code(),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

pub fn e2e_config() -> PathBuf {
    fixtures().join("e2e.toml")
}

/// filter → augment → eval → dpo-prep into `out`. Returns the steps run;
/// stops at the first nonzero exit.
pub fn run_pipeline(out: &Path) -> Vec<Step> {
    let cfg = e2e_config().display().to_string();
    let o = |p: &str| out.join(p).display().to_string();
    let s = |x: &str| x.to_string();
    let plan: Vec<Vec<String>> = vec![
        vec![s("--config"), cfg.clone(), s("filter"), s("--out"), o("")],
        vec![s("--config"), cfg.clone(), s("augment"), o("manifest.jsonl"), s("--out"), o("")],
        vec![
            s("--config"),
            cfg.clone(),
            s("eval"),
            o("sva_eval_machine.jsonl"),
            fixtures().join("human_cases.jsonl").display().to_string(),
            s("--out"),
            o("eval"),
            s("--csv"),
        ],
        vec![s("--config"), cfg.clone(), s("eval"), o("train_cases.jsonl"), s("--out"), o("eval_train")],
        vec![s("--config"), cfg, s("dpo-prep"), o("eval_train/results.jsonl"), s("--out"), o("dpo")],
    ];
    let mut steps = Vec::new();
    for args in plan {
        let step = run_cli(&args);
        let ok = step.code == Some(0);
        steps.push(step);
        if !ok {
            break;
        }
    }
    steps
}

/// Relative path → bytes for every file under `dir`.
pub fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    walk(dir)
        .into_iter()
        .map(|p| {
            let rel = p.strip_prefix(dir).unwrap().to_string_lossy().replace('\\', "/");
            let bytes = std::fs::read(&p).unwrap();
            (rel, bytes)
        })
        .collect()
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let Ok(rd) = std::fs::read_dir(dir) else { return out };
    for e in rd.flatten() {
        let p = e.path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

/// Names of files that differ between two snapshots.
pub fn differences(a: &BTreeMap<String, Vec<u8>>, b: &BTreeMap<String, Vec<u8>>) -> Vec<String> {
    let mut keys: Vec<&String> = a.keys().chain(b.keys()).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter().filter(|k| a.get(*k) != b.get(*k)).cloned().collect()
}

/// Re-record the mock store with the scripted adapters and refreeze the
/// golden outputs.
pub fn regenerate() {
    let fx = fixtures();
    let mut cfg = PipelineConfig::load(&e2e_config()).expect("fixture config loads");
    let mock_dir = cfg.mock.dir.clone().expect("fixture config names a mock dir");
    let _ = std::fs::remove_dir_all(&mock_dir);
    cfg.mock.mode = MockMode::Record;

    let all = load_dir(&cfg.corpus_dir).expect("fixture corpus loads");
    let human: Vec<EvalCase> = read_jsonl(&fx.join("human_cases.jsonl")).expect("human cases load");
    let (_, kept) = filter_units(all.clone());
    let mut tc = Toolchain::new(
        Arc::new(ScriptedCompiler),
        Arc::new(ScriptedVerifier::new(&all)),
        Arc::new(ScriptedLlm::new(&all, &human)),
    );
    tc.depth = cfg.verifier.depth;
    tc.temperature = cfg.llm.temperature;
    tc.max_attempts = cfg.llm.max_attempts;
    let tc = tc.with_replay(Arc::new(ReplayStore::new(&mock_dir)), MockMode::Record);

    let out = augment(&kept, &tc, &AugmentOptions::from_config(&cfg)).expect("augment succeeds");
    let collect = CollectOptions {
        n_target: cfg.eval.n,
        max_rounds: cfg.eval.max_rounds,
        temperature: cfg.llm.temperature,
        max_attempts: cfg.llm.max_attempts,
        retry_templates: cfg.eval.retry_templates.clone(),
    };
    let judge = JudgeOptions { mode: cfg.eval.mode, line_only: cfg.eval.line_only };
    let mut bench = out.eval_cases.clone();
    bench.extend(human);
    for r in evaluate_cases(&bench, &tc, &collect, judge, cfg.eval.parallel) {
        r.expect("benchmark case evaluates");
    }
    for r in evaluate_cases(&out.train_cases, &tc, &collect, judge, cfg.eval.parallel) {
        r.expect("training case evaluates");
    }

    let golden = fx.join("golden");
    let _ = std::fs::remove_dir_all(&golden);
    let steps = run_pipeline(&golden);
    for s in &steps {
        assert_eq!(s.code, Some(0), "{:?}\n{}", s.args, s.stderr);
    }
}
