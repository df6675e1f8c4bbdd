//! Benchmark harness: response collection, judging, exact pass@k and
//! report aggregation.

use std::collections::BTreeMap;

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::config::JudgeMode;
use crate::corpus::{count_lines, tokenize};
use crate::dataset::{length_bin, GoldenSolution, BIN_LABELS};
use crate::mutate::{Relation, SyntacticKind};
use crate::toolchain::{LlmBackend, LlmError, LlmRequest, LlmTask, Toolchain, VerifyStatus};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("pass@k domain error: n={n}, c={c}, k={k}")]
    Domain { n: usize, c: usize, k: usize },
    #[error("only {0} valid responses collected")]
    InsufficientValidResponses(usize),
    #[error("reverify mode needs a configured verifier")]
    ReverifyUnavailable,
    #[error("nothing to aggregate")]
    Empty,
    #[error("case `{id}`: {message}")]
    InvalidCase { id: String, message: String },
    #[error("solver call failed: {0}")]
    Llm(#[from] LlmError),
}

// ---------------------------------------------------------------------------
// pass@k

fn binomial(n: usize, k: usize) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for i in 0..k {
        acc *= n - i;
        acc /= i + 1;
    }
    acc
}

fn ratio_to_f64(num: &BigUint, den: &BigUint) -> f64 {
    let shift = den.bits().saturating_sub(62);
    let n = (num >> shift).to_f64().unwrap_or(f64::INFINITY);
    let d = (den >> shift).to_f64().unwrap_or(f64::INFINITY);
    n / d
}

/// Unbiased pass@k: `1 - C(n-c, k) / C(n, k)`, evaluated on exact integers.
pub fn pass_at_k(n: usize, c: usize, k: usize) -> Result<f64, EvalError> {
    if c > n || k == 0 || k > n {
        return Err(EvalError::Domain { n, c, k });
    }
    let total = binomial(n, k);
    let miss = binomial(n - c, k);
    Ok(ratio_to_f64(&(&total - &miss), &total))
}

// ---------------------------------------------------------------------------
// Cases and responses

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseSource {
    Machine,
    Human,
}

impl CaseSource {
    pub fn as_str(self) -> &'static str {
        match self {
            CaseSource::Machine => "machine",
            CaseSource::Human => "human",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCase {
    pub id: String,
    pub source: CaseSource,
    pub spec: String,
    pub buggy_sv_code: String,
    pub log: String,
    pub golden_buggy_line: String,
    pub golden_corrected_line: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub golden_line_no: Option<usize>,
    pub bug_syntactic: SyntacticKind,
    pub bug_relation: Relation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length_bin: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cot: Option<String>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl EvalCase {
    pub fn golden(&self) -> GoldenSolution {
        GoldenSolution {
            buggy_line: self.golden_buggy_line.clone(),
            corrected_line: self.golden_corrected_line.clone(),
            line_no: self.golden_line_no.unwrap_or(0),
        }
    }

    pub fn bin(&self) -> usize {
        self.length_bin.unwrap_or_else(|| length_bin(count_lines(&self.buggy_sv_code)))
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: &str| Err(EvalError::InvalidCase { id: self.id.clone(), message: m.into() });
        if self.bug_relation == Relation::Unknown {
            return bad("bug_relation must be Direct or Indirect");
        }
        if self.length_bin.is_some_and(|b| b >= BIN_LABELS.len()) {
            return bad("length_bin out of range");
        }
        if self.golden_buggy_line.trim().is_empty() {
            return bad("empty golden_buggy_line");
        }
        Ok(())
    }

    /// The question posed to the solver.
    pub fn prompt(&self) -> String {
        format!(
            "You are debugging a SystemVerilog design whose assertion fails under formal verification.\n\
             \n## Specification\n{}\n\n## Code\n```systemverilog\n{}```\n\n## Verifier log\n```\n{}\n```\n\n\
             Identify the single buggy line and its fix. Think step by step, then reply with one JSON object:\n\
             {{\"buggy_line\": \"<line as written>\", \"fix\": \"<corrected line>\", \"cot\": \"<reasoning>\"}}",
            self.spec.trim(),
            self.buggy_sv_code,
            self.log.trim()
        )
    }

    /// The reference answer in the response format.
    pub fn reference_answer(&self) -> String {
        json!({
            "buggy_line": self.golden_buggy_line,
            "fix": self.golden_corrected_line,
            "cot": self.cot.clone().unwrap_or_default(),
        })
        .to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedAnswer {
    pub buggy_line: String,
    pub fix: String,
    pub cot: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub raw_text: String,
    pub parsed: Option<ParsedAnswer>,
    pub valid_json: bool,
}

const BUGGY_KEYS: &[&str] = &["buggy_line", "buggy line", "buggyLine", "bug_line"];
const FIX_KEYS: &[&str] = &["fix", "corrected_line", "fixed_line", "suggested_fix", "correction"];
const COT_KEYS: &[&str] = &["cot", "CoT", "chain_of_thought", "reasoning", "explanation"];

fn pick(obj: &Map<String, Value>, keys: &[&str]) -> Option<String> {
    keys.iter().find_map(|k| match obj.get(*k)? {
        Value::String(s) => Some(s.clone()),
        Value::Array(items) => Some(
            items
                .iter()
                .map(|v| v.as_str().map(str::to_string).unwrap_or_else(|| v.to_string()))
                .collect::<Vec<_>>()
                .join("\n"),
        ),
        _ => None,
    })
}

/// First JSON object embedded in `text` (prose and code fences tolerated).
fn find_object(text: &str) -> Option<Map<String, Value>> {
    for (i, _) in text.match_indices('{') {
        let mut it = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
        if let Some(Ok(Value::Object(o))) = it.next() {
            return Some(o);
        }
    }
    None
}

impl ModelResponse {
    pub fn parse(raw: &str) -> Self {
        let parsed = find_object(raw).and_then(|o| {
            Some(ParsedAnswer { buggy_line: pick(&o, BUGGY_KEYS)?, fix: pick(&o, FIX_KEYS)?, cot: pick(&o, COT_KEYS)? })
        });
        ModelResponse { raw_text: raw.to_string(), valid_json: parsed.is_some(), parsed }
    }
}

// ---------------------------------------------------------------------------
// Collection

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Correct,
    Incorrect,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgedResponse {
    #[serde(flatten)]
    pub response: ModelResponse,
    pub verdict: Option<Verdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub case_id: String,
    pub source: CaseSource,
    pub bug_syntactic: SyntacticKind,
    pub bug_relation: Relation,
    pub length_bin: usize,
    /// Valid responses collected.
    pub n: usize,
    /// Valid responses judged correct.
    pub c: usize,
    /// Question and reference answer, for preference-data construction.
    pub x: String,
    pub p: String,
    pub responses: Vec<JudgedResponse>,
}

#[derive(Debug, Clone)]
pub struct CollectOptions {
    pub n_target: usize,
    pub max_rounds: usize,
    pub temperature: f64,
    pub max_attempts: u32,
    pub retry_templates: Vec<String>,
}

impl Default for CollectOptions {
    fn default() -> Self {
        let e = crate::config::EvalConfig::default();
        CollectOptions {
            n_target: e.n,
            max_rounds: e.max_rounds,
            temperature: 0.2,
            max_attempts: 3,
            retry_templates: e.retry_templates,
        }
    }
}

/// Ask the solver until `n_target` valid replies arrive or `max_rounds`
/// calls are spent. Invalid replies are kept but do not count toward `n`;
/// each one moves the prompt to the next retry template.
pub fn collect_responses(
    case: &EvalCase,
    solver: &dyn LlmBackend,
    opts: &CollectOptions,
) -> Result<CaseResult, EvalError> {
    let base = case.prompt();
    let mut responses = Vec::new();
    let mut valid = 0;
    let mut invalid = 0;
    for round in 0..opts.max_rounds {
        if valid == opts.n_target {
            break;
        }
        let prompt = match (invalid, opts.retry_templates.len()) {
            (0, _) | (_, 0) => base.clone(),
            (i, len) => format!("{base}\n\n{}", opts.retry_templates[i.min(len) - 1]),
        };
        let req = LlmRequest {
            task: LlmTask::Solve,
            prompt_text: prompt,
            temperature: opts.temperature,
            max_attempts: opts.max_attempts,
            sample_index: round as u32,
        };
        let reply = solver.call(&req)?;
        let resp = ModelResponse::parse(&reply.text);
        if resp.valid_json {
            valid += 1;
        } else {
            invalid += 1;
        }
        responses.push(JudgedResponse { response: resp, verdict: None });
    }
    if valid < opts.n_target {
        return Err(EvalError::InsufficientValidResponses(valid));
    }
    Ok(CaseResult {
        case_id: case.id.clone(),
        source: case.source,
        bug_syntactic: case.bug_syntactic,
        bug_relation: case.bug_relation,
        length_bin: case.bin(),
        n: valid,
        c: 0,
        x: base,
        p: case.reference_answer(),
        responses,
    })
}

// ---------------------------------------------------------------------------
// Judging

/// Code tokens of a line without a trailing `;`.
fn line_tokens(line: &str) -> Vec<String> {
    let mut toks: Vec<String> = tokenize(line).into_iter().filter(|t| !t.is_trivia()).map(|t| t.text).collect();
    if toks.last().is_some_and(|t| t == ";") {
        toks.pop();
    }
    toks
}

/// Lines equal up to whitespace between tokens and a trailing `;`.
pub fn lines_match(a: &str, b: &str) -> bool {
    line_tokens(a) == line_tokens(b)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct JudgeOptions {
    pub mode: JudgeMode,
    pub line_only: bool,
}

/// Replace the first line of `code` matching `buggy_line` with `fix`,
/// keeping its indentation.
pub fn apply_fix(code: &str, buggy_line: &str, fix: &str) -> Option<String> {
    let mut lines: Vec<String> = code.split('\n').map(str::to_string).collect();
    let idx = lines.iter().position(|l| !line_tokens(l).is_empty() && lines_match(l, buggy_line))?;
    let indent: String = lines[idx].chars().take_while(|c| c.is_whitespace()).collect();
    lines[idx] = format!("{indent}{}", fix.trim());
    Some(lines.join("\n"))
}

pub fn judge(
    response: &ModelResponse,
    golden: &GoldenSolution,
    buggy_code: &str,
    opts: JudgeOptions,
    toolchain: Option<&Toolchain>,
) -> Result<Verdict, EvalError> {
    let Some(p) = &response.parsed else { return Ok(Verdict::Incorrect) };
    let textual = || {
        lines_match(&p.buggy_line, &golden.buggy_line)
            && (opts.line_only || lines_match(&p.fix, &golden.corrected_line))
    };
    let reverify = || -> Result<bool, EvalError> {
        let tc = toolchain.filter(|t| t.verifier_configured).ok_or(EvalError::ReverifyUnavailable)?;
        let Some(fixed) = apply_fix(buggy_code, &p.buggy_line, &p.fix) else { return Ok(false) };
        Ok(tc.verify(&fixed).map(|o| o.status == VerifyStatus::Proven).unwrap_or(false))
    };
    let ok = match opts.mode {
        JudgeMode::Textual => textual(),
        JudgeMode::Reverify => reverify()?,
        JudgeMode::Both => textual() && reverify()?,
    };
    Ok(if ok { Verdict::Correct } else { Verdict::Incorrect })
}

/// Fill in verdicts and `c`.
pub fn judge_case(
    mut result: CaseResult,
    case: &EvalCase,
    opts: JudgeOptions,
    toolchain: Option<&Toolchain>,
) -> Result<CaseResult, EvalError> {
    let golden = case.golden();
    let mut c = 0;
    for r in result.responses.iter_mut().filter(|r| r.response.valid_json) {
        let v = judge(&r.response, &golden, &case.buggy_sv_code, opts, toolchain)?;
        c += usize::from(v == Verdict::Correct);
        r.verdict = Some(v);
    }
    result.c = c;
    Ok(result)
}

/// Collect and judge every case, `parallel` at a time. Output order
/// follows input order.
pub fn evaluate_cases(
    cases: &[EvalCase],
    toolchain: &Toolchain,
    collect: &CollectOptions,
    judge_opts: JudgeOptions,
    parallel: usize,
) -> Vec<Result<CaseResult, EvalError>> {
    let run = |case: &EvalCase| {
        case.validate()?;
        let raw = collect_responses(case, toolchain.llm.as_ref(), collect)?;
        judge_case(raw, case, judge_opts, Some(toolchain))
    };
    match rayon::ThreadPoolBuilder::new().num_threads(parallel.max(1)).build() {
        Ok(pool) => pool.install(|| cases.par_iter().map(run).collect()),
        Err(_) => cases.iter().map(run).collect(),
    }
}

// ---------------------------------------------------------------------------
// Aggregation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassAtKReport {
    pub cases: usize,
    pub ks: Vec<usize>,
    pub overall: Map<String, Value>,
    pub by_source: Map<String, Value>,
    pub by_bug_type: Map<String, Value>,
    pub by_length_bin: Map<String, Value>,
    /// `histogram[c]` counts cases with exactly `c` correct responses.
    pub histogram: Vec<usize>,
}

pub fn rate_key(k: usize) -> String {
    format!("pass@{k}")
}

fn sorted_mean(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

fn rates(group: &[&CaseResult], ks: &[usize]) -> Result<Map<String, Value>, EvalError> {
    let mut m = Map::new();
    for &k in ks {
        let vals = group.iter().map(|r| pass_at_k(r.n, r.c, k)).collect::<Result<Vec<_>, _>>()?;
        m.insert(rate_key(k), json!(sorted_mean(vals)));
    }
    Ok(m)
}

fn breakdown<K: Ord + Clone>(
    results: &[CaseResult],
    ks: &[usize],
    keys: impl Fn(&CaseResult) -> Vec<K>,
    label: impl Fn(&K) -> String,
) -> Result<Map<String, Value>, EvalError> {
    let mut groups: BTreeMap<K, Vec<&CaseResult>> = BTreeMap::new();
    for r in results {
        for k in keys(r) {
            groups.entry(k).or_default().push(r);
        }
    }
    let mut out = Map::new();
    for (k, g) in groups {
        out.insert(label(&k), Value::Object(rates(&g, ks)?));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum BugAxis {
    Syntactic(SyntacticKind),
    Relation(Relation),
}

/// Mean per-case pass@k overall and per source, bug type and length bin,
/// plus the histogram of per-case `c`. Independent of case order.
pub fn aggregate(results: &[CaseResult], ks: &[usize]) -> Result<PassAtKReport, EvalError> {
    if results.is_empty() {
        return Err(EvalError::Empty);
    }
    let all: Vec<&CaseResult> = results.iter().collect();
    let max_n = results.iter().map(|r| r.n).max().unwrap_or(0);
    let mut histogram = vec![0; max_n + 1];
    for r in results {
        histogram[r.c] += 1;
    }
    Ok(PassAtKReport {
        cases: results.len(),
        ks: ks.to_vec(),
        overall: rates(&all, ks)?,
        by_source: breakdown(results, ks, |r| vec![r.source], |s| s.as_str().to_string())?,
        by_bug_type: breakdown(
            results,
            ks,
            |r| vec![BugAxis::Syntactic(r.bug_syntactic), BugAxis::Relation(r.bug_relation)],
            |a| match a {
                BugAxis::Syntactic(s) => s.as_str().to_string(),
                BugAxis::Relation(r) => r.as_str().to_string(),
            },
        )?,
        by_length_bin: breakdown(results, ks, |r| vec![r.length_bin], |b| BIN_LABELS[*b].to_string())?,
        histogram,
    })
}

/// Flat CSV view: `group,key,pass@k...`.
pub fn report_csv(report: &PassAtKReport) -> String {
    let mut out = String::from("group,key");
    for k in &report.ks {
        out.push(',');
        out.push_str(&rate_key(*k));
    }
    out.push('\n');
    let mut row = |group: &str, key: &str, rates: &Map<String, Value>| {
        out.push_str(&format!("{group},{key}"));
        for k in &report.ks {
            let v = rates.get(&rate_key(*k)).and_then(Value::as_f64).unwrap_or(f64::NAN);
            out.push_str(&format!(",{v:.6}"));
        }
        out.push('\n');
    };
    row("overall", "all", &report.overall);
    for (name, map) in
        [("source", &report.by_source), ("bug_type", &report.by_bug_type), ("length_bin", &report.by_length_bin)]
    {
        for (key, v) in map {
            if let Some(rates) = v.as_object() {
                row(name, key, rates);
            }
        }
    }
    out
}
