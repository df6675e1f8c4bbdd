//! Augmentation pipeline: compile, specify, generate and validate
//! assertions, inject bugs, verify mutants, split, attach chains of thought.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::corpus::SourceUnit;
use crate::dataset::{
    build_records, length_bin, split, sva_case_parts, validate_cot, CotVerdict, DatasetError, Family, ItemError,
    MutantItem, PtItem, Records, Rejection, Route, Side, SplitPlan, BIN_LABELS,
};
use crate::eval::{CaseSource, EvalCase, ModelResponse};
use crate::mutate::{
    classify_relation, sample_mutations, AssertionSpec, MutationEngine, MutationRecord, SyntacticKind,
};
use crate::toolchain::{CompileStatus, LlmTask, Toolchain, VerifyOutcome, VerifyStatus};

#[derive(Debug, Clone)]
pub struct AugmentOptions {
    pub seed: u64,
    pub mutations_per_unit: usize,
    pub assertions_per_unit: usize,
    pub split_fraction: f64,
    pub llm_bugs: bool,
    pub parallel: usize,
}

impl AugmentOptions {
    pub fn from_config(cfg: &crate::config::PipelineConfig) -> Self {
        AugmentOptions {
            seed: cfg.seed,
            mutations_per_unit: cfg.mutations_per_unit,
            assertions_per_unit: cfg.assertions_per_unit,
            split_fraction: cfg.split_fraction,
            llm_bugs: cfg.llm_bugs,
            parallel: cfg.parallel,
        }
    }
}

/// A per-item failure that did not stop the run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemFailure {
    pub unit_id: String,
    pub stage: String,
    pub detail: String,
}

/// A mutation together with where it was routed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutationLog {
    #[serde(flatten)]
    pub record: MutationRecord,
    #[serde(flatten)]
    pub route: Route,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentOutput {
    pub records: Records,
    pub eval_cases: Vec<EvalCase>,
    pub train_cases: Vec<EvalCase>,
    pub split: SplitPlan,
    pub mutations: Vec<MutationLog>,
    pub errors: Vec<ItemFailure>,
    pub summary: Value,
}

// ---------------------------------------------------------------------------
// Prompts

pub fn spec_prompt(unit: &SourceUnit) -> String {
    format!(
        "Write a concise design specification (purpose, ports, behaviour) for the following Verilog code.\n\n```verilog\n{}```",
        unit.text
    )
}

pub fn analysis_prompt(unit: &SourceUnit, diagnostics: &str) -> String {
    format!(
        "The following Verilog code fails to compile.\n\n```verilog\n{}```\n\nCompiler output:\n```\n{}\n```\n\nExplain each error and how to fix it.",
        unit.text,
        diagnostics.trim()
    )
}

pub fn sva_prompt(unit: &SourceUnit, spec: &str, count: usize) -> String {
    let top = unit.module_names.first().map(String::as_str).unwrap_or("top");
    format!(
        "Specification:\n{}\n\n```verilog\n{}```\n\nWrite {count} SystemVerilog assertions for module `{top}` that hold on this design. \
         Put each assertion on its own line as one complete statement beginning with `assert`.",
        spec.trim(),
        unit.text
    )
}

pub fn bugs_prompt(unit: &SourceUnit, count: usize) -> String {
    format!(
        "```verilog\n{}```\n\nPropose {count} realistic single-line bugs for this code. Reply with a JSON array of objects \
         {{\"line\": <1-based line number>, \"mutated\": \"<full replacement line>\"}}.",
        unit.text
    )
}

/// Assertion statements in an LLM reply, one per line.
pub fn parse_assertions(reply: &str) -> Vec<String> {
    let mut seen = BTreeSet::new();
    reply
        .lines()
        .map(str::trim)
        .map(|l| l.trim_start_matches(|c: char| c == '-' || c == '*' || c.is_ascii_digit() || c == '.' || c == ' '))
        .filter(|l| crate::toolchain::has_assertion(l) && l.ends_with(';'))
        .filter(|l| seen.insert(l.to_string()))
        .map(str::to_string)
        .collect()
}

#[derive(Deserialize)]
struct LlmBug {
    line: usize,
    mutated: String,
}

/// Per-unit seed, independent of processing order.
pub fn derive_seed(seed: u64, unit_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(unit_id.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 8 bytes"))
}

// ---------------------------------------------------------------------------
// Per-unit stage

#[derive(Default)]
struct UnitOutcome {
    pt: Option<PtItem>,
    mutants: Vec<MutantItem>,
    errors: Vec<ItemFailure>,
    invalid_sva: usize,
}

fn fail(unit: &SourceUnit, stage: &str, detail: impl Into<String>) -> ItemFailure {
    ItemFailure { unit_id: unit.id.clone(), stage: stage.into(), detail: detail.into() }
}

fn process_unit(unit: &SourceUnit, tc: &Toolchain, opts: &AugmentOptions) -> UnitOutcome {
    let mut out = UnitOutcome::default();
    let ask = |task, prompt: String| tc.ask(&tc.request(task, prompt)).map(|r| r.text);

    let compiled = tc.compile(&unit.text);
    match compiled.status {
        CompileStatus::ToolError => {
            out.errors.push(fail(unit, "compile", compiled.stderr_text));
            return out;
        }
        CompileStatus::SyntaxError => {
            let spec = ask(LlmTask::Spec, spec_prompt(unit));
            let analysis = ask(LlmTask::Analysis, analysis_prompt(unit, &compiled.stderr_text));
            match (spec, analysis) {
                (Ok(spec), Ok(analysis)) => out.pt = Some(PtItem { unit_id: unit.id.clone(), spec, analysis }),
                (Err(e), _) | (_, Err(e)) => out.errors.push(fail(unit, "llm", e.to_string())),
            }
            return out;
        }
        CompileStatus::Ok => {}
    }

    let spec = match ask(LlmTask::Spec, spec_prompt(unit)) {
        Ok(s) => s,
        Err(e) => {
            out.errors.push(fail(unit, "llm", e.to_string()));
            return out;
        }
    };
    let reply = match ask(LlmTask::Sva, sva_prompt(unit, &spec, opts.assertions_per_unit)) {
        Ok(r) => r,
        Err(e) => {
            out.errors.push(fail(unit, "llm", e.to_string()));
            return out;
        }
    };
    let candidates = parse_assertions(&reply);
    if candidates.is_empty() {
        out.errors.push(fail(unit, "sva", "reply contains no assertion statement"));
        return out;
    }

    // Validate assertions on the original design.
    let mut valid: Vec<AssertionSpec> = Vec::new();
    let mut first_status = None;
    for text in candidates.iter().take(opts.assertions_per_unit.max(1)) {
        let Ok(a) = AssertionSpec::for_source(text, &unit.text) else {
            out.invalid_sva += 1;
            continue;
        };
        let status = a
            .insert_into(&unit.text)
            .ok()
            .and_then(|src| tc.verify(&src).ok())
            .map_or(VerifyStatus::ToolError, |o| o.status);
        first_status.get_or_insert(status);
        match status {
            VerifyStatus::Proven => valid.push(a),
            VerifyStatus::ToolError => out.errors.push(fail(unit, "verify", format!("assertion `{text}`"))),
            _ => out.invalid_sva += 1,
        }
    }
    let sva_status = if valid.is_empty() { first_status } else { Some(VerifyStatus::Proven) };

    // Bugs.
    let mut mutations = sample_mutations(unit, opts.mutations_per_unit, derive_seed(opts.seed, &unit.id));
    if opts.llm_bugs {
        match ask(LlmTask::Bugs, bugs_prompt(unit, opts.mutations_per_unit)) {
            Ok(reply) => {
                let engine = MutationEngine::new(unit);
                let start = reply.find('[').unwrap_or(0);
                let bugs: Vec<LlmBug> = serde_json::from_str(&reply[start..]).unwrap_or_default();
                for b in bugs {
                    if let Ok(r) = engine.record_for_replacement(b.line, &b.mutated, 0) {
                        if !mutations.iter().any(|m| m.line == r.line && m.mutated_snippet == r.mutated_snippet) {
                            mutations.push(r);
                        }
                    }
                }
            }
            Err(e) => out.errors.push(fail(unit, "llm", e.to_string())),
        }
    }

    for mutation in mutations {
        out.mutants.push(process_mutant(unit, tc, &spec, mutation, &valid, sva_status));
    }
    out
}

fn process_mutant(
    unit: &SourceUnit,
    tc: &Toolchain,
    spec: &str,
    mut mutation: MutationRecord,
    valid: &[AssertionSpec],
    sva_status: Option<VerifyStatus>,
) -> MutantItem {
    let mut item = MutantItem {
        spec: spec.to_string(),
        mutation: mutation.clone(),
        assertion: valid.first().cloned(),
        sva_on_original: sva_status,
        mutant_compile: None,
        mutant_verify: None,
        log: String::new(),
        cot: None,
    };
    if valid.is_empty() {
        return item;
    }
    let Ok(mutant) = mutation.apply(&unit.text) else {
        return item;
    };
    let compiled = tc.compile(&mutant);
    item.mutant_compile = Some(compiled.status);
    if compiled.status != CompileStatus::Ok {
        return item;
    }
    let mut first: Option<(VerifyOutcome, &AssertionSpec)> = None;
    let mut failed = None;
    let mut tool_error = None;
    for a in valid {
        let outcome = match a.insert_into(&mutant).ok().map(|src| tc.verify(&src)) {
            Some(Ok(o)) => o,
            _ => VerifyOutcome::tool_error("assertion could not be inserted"),
        };
        match outcome.status {
            VerifyStatus::AssertionFailed => {
                failed = Some((outcome, a));
                break;
            }
            VerifyStatus::ToolError => {
                tool_error.get_or_insert((outcome, a));
            }
            _ => {
                first.get_or_insert((outcome, a));
            }
        }
    }
    let (outcome, assertion) = failed.or(tool_error).or(first).expect("at least one assertion was checked");
    mutation.bug_type.relation = classify_relation(&mutation, assertion);
    item.mutation = mutation;
    item.assertion = Some(assertion.clone());
    item.mutant_verify = Some(outcome.status);
    item.log = outcome.log_text;
    item
}

// ---------------------------------------------------------------------------
// Whole run

fn eval_case(unit: &SourceUnit, item: &MutantItem, index: usize) -> Result<EvalCase, DatasetError> {
    let parts = sva_case_parts(unit, item)?;
    Ok(EvalCase {
        id: format!("{}#{index}", unit.id),
        source: CaseSource::Machine,
        spec: item.spec.clone(),
        length_bin: Some(length_bin(unit.line_count)),
        buggy_sv_code: parts.buggy_sv_code,
        log: item.log.clone(),
        golden_buggy_line: parts.golden.buggy_line,
        golden_corrected_line: parts.golden.corrected_line,
        golden_line_no: Some(parts.golden.line_no),
        bug_syntactic: item.mutation.bug_type.syntactic,
        bug_relation: item.mutation.bug_type.relation,
        cot: item.cot.clone(),
        extra: Map::new(),
    })
}

fn run_pool<T: Send>(parallel: usize, f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(parallel.max(1)).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

pub fn augment(units: &[SourceUnit], tc: &Toolchain, opts: &AugmentOptions) -> Result<AugmentOutput, DatasetError> {
    let outcomes: Vec<UnitOutcome> =
        run_pool(opts.parallel, || units.par_iter().map(|u| process_unit(u, tc, opts)).collect());

    let by_id: BTreeMap<&str, &SourceUnit> = units.iter().map(|u| (u.id.as_str(), u)).collect();
    let mut pt_items = Vec::new();
    let mut mutants: Vec<MutantItem> = Vec::new();
    let mut errors = Vec::new();
    let mut invalid_sva = 0;
    for o in outcomes {
        pt_items.extend(o.pt);
        mutants.extend(o.mutants);
        errors.extend(o.errors);
        invalid_sva += o.invalid_sva;
    }
    for m in &mutants {
        if let Route::Error(code) = m.route() {
            errors.push(ItemFailure {
                unit_id: m.mutation.unit_id.clone(),
                stage: "mutant".into(),
                detail: format!("{} at line {}", code.as_str(), m.mutation.line),
            });
        }
    }

    // Split the units that produced assertion-failing mutants.
    let sva_units: Vec<SourceUnit> = {
        let ids: BTreeSet<&str> = mutants
            .iter()
            .filter(|m| m.route() == Route::Family(Family::Svabug))
            .map(|m| m.mutation.unit_id.as_str())
            .collect();
        units.iter().filter(|u| ids.contains(u.id.as_str())).cloned().collect()
    };
    let plan = split(&sva_units, opts.seed, opts.split_fraction)?;
    let side = |m: &MutantItem| by_id.get(m.mutation.unit_id.as_str()).and_then(|u| plan.side_of_unit(u));

    // Chains of thought for training items only.
    let cot_results: Vec<(usize, Option<String>, CotVerdict)> = run_pool(opts.parallel, || {
        mutants
            .par_iter()
            .enumerate()
            .filter(|(_, m)| m.route() == Route::Family(Family::Svabug) && side(m) == Some(Side::Train))
            .map(|(i, m)| {
                let unit = by_id[m.mutation.unit_id.as_str()];
                let Ok(case) = eval_case(unit, m, i) else { return (i, None, CotVerdict::Unparseable) };
                match tc.ask(&tc.request(LlmTask::Cot, case.prompt())) {
                    Ok(reply) => {
                        let verdict = validate_cot(&reply.text, &case.golden());
                        let cot = verdict
                            .is_correct()
                            .then(|| ModelResponse::parse(&reply.text).parsed.map(|p| p.cot))
                            .flatten();
                        (i, cot, verdict)
                    }
                    Err(_) => (i, None, CotVerdict::Unparseable),
                }
            })
            .collect()
    });
    let mut cot_stats: BTreeMap<&str, usize> = [("correct", 0), ("incorrect", 0), ("unparseable", 0)].into();
    for (i, cot, verdict) in cot_results {
        mutants[i].cot = cot;
        let key = match verdict {
            CotVerdict::Correct => "correct",
            CotVerdict::Incorrect => "incorrect",
            CotVerdict::Unparseable => "unparseable",
        };
        *cot_stats.get_mut(key).unwrap() += 1;
    }

    // Per-unit item indices give stable case ids.
    let mut per_unit: BTreeMap<&str, usize> = BTreeMap::new();
    let mut indexed = Vec::with_capacity(mutants.len());
    for m in &mutants {
        let n = per_unit.entry(m.mutation.unit_id.as_str()).or_default();
        indexed.push(*n);
        *n += 1;
    }

    let mut eval_cases = Vec::new();
    let mut train_cases = Vec::new();
    let mut record_mutants = Vec::new();
    for (m, idx) in mutants.iter().zip(&indexed) {
        let unit = by_id[m.mutation.unit_id.as_str()];
        match (m.route(), side(m)) {
            (Route::Family(Family::Svabug), Some(Side::Test)) => eval_cases.push(eval_case(unit, m, *idx)?),
            (Route::Family(Family::Svabug), _) => {
                train_cases.push(eval_case(unit, m, *idx)?);
                record_mutants.push(m.clone());
            }
            // Bug items of held-out units would leak their code into training data.
            (Route::Family(Family::Bug), Some(Side::Test)) => {}
            _ => record_mutants.push(m.clone()),
        }
    }
    let records = build_records(units, &pt_items, &record_mutants)?;

    let mutation_logs: Vec<MutationLog> =
        mutants.iter().map(|m| MutationLog { record: m.mutation.clone(), route: m.route() }).collect();
    let summary = summarize(
        &records,
        &plan,
        &mutants,
        &eval_cases,
        &train_cases,
        invalid_sva,
        &cot_stats,
        errors.len(),
        units.len(),
    );
    Ok(AugmentOutput { records, eval_cases, train_cases, split: plan, mutations: mutation_logs, errors, summary })
}

#[allow(clippy::too_many_arguments)]
fn summarize(
    records: &Records,
    plan: &SplitPlan,
    mutants: &[MutantItem],
    eval_cases: &[EvalCase],
    train_cases: &[EvalCase],
    invalid_sva: usize,
    cot_stats: &BTreeMap<&str, usize>,
    errors: usize,
    units: usize,
) -> Value {
    let bins: Vec<Value> = plan
        .bins
        .iter()
        .enumerate()
        .map(|(i, b)| {
            json!({
                "interval": BIN_LABELS[i],
                "train_modules": b.train.len(),
                "test_modules": b.test.len(),
                "svabug_train": train_cases.iter().filter(|c| c.bin() == i).count(),
                "sva_eval_machine": eval_cases.iter().filter(|c| c.bin() == i).count(),
            })
        })
        .collect();
    let mut by_type = Map::new();
    let all_cases: Vec<&EvalCase> = train_cases.iter().chain(eval_cases).collect();
    for k in SyntacticKind::ALL {
        let n = all_cases.iter().filter(|c| c.bug_syntactic == k).count();
        by_type.insert(k.as_str().into(), json!(n));
    }
    for r in [crate::mutate::Relation::Direct, crate::mutate::Relation::Indirect] {
        let n = all_cases.iter().filter(|c| c.bug_relation == r).count();
        by_type.insert(r.as_str().into(), json!(n));
    }
    let count = |route: Route| mutants.iter().filter(|m| m.route() == route).count();
    json!({
        "units": units,
        "mutations": mutants.len(),
        "pt": records.pt.len(),
        "bug": records.bug.len(),
        "svabug": records.svabug.len(),
        "sva_eval_machine": eval_cases.len(),
        "bins": bins,
        "svabug_by_bug_type": by_type,
        "rejected": {
            "invalid_sva": invalid_sva,
            "mutant_syntax_error": count(Route::Rejected(Rejection::MutantSyntaxError)),
            "mutant_without_valid_sva": count(Route::Rejected(Rejection::InvalidSva)),
        },
        "cot": cot_stats,
        "item_errors": {
            "compile_tool_error": count(Route::Error(ItemError::CompileToolError)),
            "verify_tool_error": count(Route::Error(ItemError::VerifyToolError)),
            "missing_outcome": count(Route::Error(ItemError::MissingOutcome)),
        },
        "errors": errors,
    })
}
