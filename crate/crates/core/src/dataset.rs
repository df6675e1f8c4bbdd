//! Dataset families, routing, golden solutions, the length-binned split
//! and JSONL persistence.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::corpus::SourceUnit;
use crate::eval::ModelResponse;
use crate::mutate::{AssertionSpec, MutateError, MutationRecord};
use crate::toolchain::{CompileStatus, VerifyStatus};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("cannot access {path}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("schema error on line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("record references unknown unit `{0}`")]
    InconsistentProvenance(String),
    #[error("unit `{0}` declares no module")]
    NoModuleName(String),
    #[error(transparent)]
    Mutate(#[from] MutateError),
}

// ---------------------------------------------------------------------------
// Records

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PtRecord {
    pub code: String,
    pub spec: String,
    pub analysis: String,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BugRecord {
    pub spec: String,
    pub buggy_code: String,
    pub buggy_line: String,
    pub corrected_line: String,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvaBugRecord {
    pub spec: String,
    pub buggy_sv_code: String,
    pub log: String,
    pub step_by_step: bool,
    pub buggy_line: String,
    pub corrected_line: String,
    pub cot: Option<String>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldenSolution {
    pub buggy_line: String,
    pub corrected_line: String,
    /// 1-based line of the bug in the code shown to the solver.
    pub line_no: usize,
}

impl GoldenSolution {
    pub fn from_mutation(rec: &MutationRecord, line_no: usize) -> Self {
        GoldenSolution {
            buggy_line: rec.mutated_snippet.trim().to_string(),
            corrected_line: rec.original_snippet.trim().to_string(),
            line_no,
        }
    }
}

/// Trim, collapse whitespace runs to one space, drop one trailing `;`.
pub fn normalize(line: &str) -> String {
    let collapsed = line.split_whitespace().collect::<Vec<_>>().join(" ");
    match collapsed.strip_suffix(';') {
        Some(s) => s.trim_end().to_string(),
        None => collapsed,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CotVerdict {
    Correct,
    Incorrect,
    Unparseable,
}

impl CotVerdict {
    pub fn is_correct(self) -> bool {
        self == CotVerdict::Correct
    }
}

/// Check a CoT reply against the golden solution. The reply must carry the
/// structured answer (`buggy_line`, `fix`, `cot`).
pub fn validate_cot(cot_text: &str, golden: &GoldenSolution) -> CotVerdict {
    let resp = ModelResponse::parse(cot_text);
    let Some(p) = resp.parsed else { return CotVerdict::Unparseable };
    if normalize(&p.buggy_line) == normalize(&golden.buggy_line)
        && normalize(&p.fix) == normalize(&golden.corrected_line)
    {
        CotVerdict::Correct
    } else {
        CotVerdict::Incorrect
    }
}

// ---------------------------------------------------------------------------
// Routing

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Pt,
    Bug,
    Svabug,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rejection {
    /// The assertion does not hold on the original design.
    InvalidSva,
    /// The mutant no longer compiles.
    MutantSyntaxError,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemError {
    CompileToolError,
    VerifyToolError,
    MissingOutcome,
}

impl ItemError {
    pub fn as_str(self) -> &'static str {
        match self {
            ItemError::CompileToolError => "compile_tool_error",
            ItemError::VerifyToolError => "verify_tool_error",
            ItemError::MissingOutcome => "missing_outcome",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "route", content = "code")]
pub enum Route {
    Family(Family),
    Rejected(Rejection),
    Error(ItemError),
}

/// Where a pipeline item ends up, from its tool outcomes. Total over all
/// inputs; later stages are ignored once an earlier one decides.
pub fn route(
    original: CompileStatus,
    sva_on_original: Option<VerifyStatus>,
    mutant_compile: Option<CompileStatus>,
    mutant_verify: Option<VerifyStatus>,
) -> Route {
    match original {
        CompileStatus::ToolError => return Route::Error(ItemError::CompileToolError),
        CompileStatus::SyntaxError => return Route::Family(Family::Pt),
        CompileStatus::Ok => {}
    }
    match sva_on_original {
        None => return Route::Error(ItemError::MissingOutcome),
        Some(VerifyStatus::ToolError) => return Route::Error(ItemError::VerifyToolError),
        Some(VerifyStatus::AssertionFailed | VerifyStatus::Inconclusive) => {
            return Route::Rejected(Rejection::InvalidSva)
        }
        Some(VerifyStatus::Proven) => {}
    }
    match mutant_compile {
        None => return Route::Error(ItemError::MissingOutcome),
        Some(CompileStatus::ToolError) => return Route::Error(ItemError::CompileToolError),
        Some(CompileStatus::SyntaxError) => return Route::Rejected(Rejection::MutantSyntaxError),
        Some(CompileStatus::Ok) => {}
    }
    match mutant_verify {
        None => Route::Error(ItemError::MissingOutcome),
        Some(VerifyStatus::ToolError) => Route::Error(ItemError::VerifyToolError),
        Some(VerifyStatus::AssertionFailed) => Route::Family(Family::Svabug),
        Some(VerifyStatus::Proven | VerifyStatus::Inconclusive) => Route::Family(Family::Bug),
    }
}

// ---------------------------------------------------------------------------
// Record assembly

/// A unit that failed to compile.
#[derive(Debug, Clone, PartialEq)]
pub struct PtItem {
    pub unit_id: String,
    pub spec: String,
    pub analysis: String,
}

/// One mutant with the outcomes that decide its family.
#[derive(Debug, Clone, PartialEq)]
pub struct MutantItem {
    pub spec: String,
    pub mutation: MutationRecord,
    /// Assertion that decided the item (the failing one, or the first valid one).
    pub assertion: Option<AssertionSpec>,
    pub sva_on_original: Option<VerifyStatus>,
    pub mutant_compile: Option<CompileStatus>,
    pub mutant_verify: Option<VerifyStatus>,
    pub log: String,
    /// Validated chain of thought, if any.
    pub cot: Option<String>,
}

impl MutantItem {
    pub fn route(&self) -> Route {
        route(CompileStatus::Ok, self.sva_on_original, self.mutant_compile, self.mutant_verify)
    }
}

/// The artefacts of an assertion-failing mutant shown to a solver.
#[derive(Debug, Clone, PartialEq)]
pub struct SvaCaseParts {
    pub buggy_sv_code: String,
    pub golden: GoldenSolution,
}

pub fn sva_case_parts(unit: &SourceUnit, item: &MutantItem) -> Result<SvaCaseParts, DatasetError> {
    let assertion = item
        .assertion
        .as_ref()
        .ok_or(DatasetError::Mutate(MutateError::ParseFailure("assertion-failing item without assertion".into())))?;
    let mutant = item.mutation.apply(&unit.text)?;
    let buggy_sv_code = assertion.insert_into(&mutant)?;
    let line_no = assertion.map_line(&mutant, item.mutation.line);
    Ok(SvaCaseParts { buggy_sv_code, golden: GoldenSolution::from_mutation(&item.mutation, line_no) })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Records {
    pub pt: Vec<PtRecord>,
    pub bug: Vec<BugRecord>,
    pub svabug: Vec<SvaBugRecord>,
}

/// Turn routed pipeline items into dataset records. Rejected and errored
/// items produce no record.
pub fn build_records(
    corpus: &[SourceUnit],
    pt_items: &[PtItem],
    mutants: &[MutantItem],
) -> Result<Records, DatasetError> {
    let units: BTreeMap<&str, &SourceUnit> = corpus.iter().map(|u| (u.id.as_str(), u)).collect();
    let lookup = |id: &str| units.get(id).copied().ok_or_else(|| DatasetError::InconsistentProvenance(id.into()));
    let mut out = Records::default();
    for p in pt_items {
        let unit = lookup(&p.unit_id)?;
        out.pt.push(PtRecord {
            code: unit.text.clone(),
            spec: p.spec.clone(),
            analysis: p.analysis.clone(),
            extra: Map::new(),
        });
    }
    for m in mutants {
        let unit = lookup(&m.mutation.unit_id)?;
        match m.route() {
            Route::Family(Family::Bug) => out.bug.push(BugRecord {
                spec: m.spec.clone(),
                buggy_code: m.mutation.apply(&unit.text)?,
                buggy_line: m.mutation.mutated_snippet.trim().to_string(),
                corrected_line: m.mutation.original_snippet.trim().to_string(),
                extra: Map::new(),
            }),
            Route::Family(Family::Svabug) => {
                let parts = sva_case_parts(unit, m)?;
                out.svabug.push(SvaBugRecord {
                    spec: m.spec.clone(),
                    buggy_sv_code: parts.buggy_sv_code,
                    log: m.log.clone(),
                    step_by_step: m.cot.is_some(),
                    buggy_line: parts.golden.buggy_line,
                    corrected_line: parts.golden.corrected_line,
                    cot: m.cot.clone(),
                    extra: Map::new(),
                })
            }
            _ => {}
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Length bins and split

pub const BIN_LABELS: [&str; 5] = ["(0,50]", "(50,100]", "(100,150]", "(150,200]", "(200,+inf)"];

/// Bin index of a line count; intervals are open below and closed above.
pub fn length_bin(line_count: usize) -> usize {
    match line_count {
        0..=50 => 0,
        51..=100 => 1,
        101..=150 => 2,
        151..=200 => 3,
        _ => 4,
    }
}

/// `round(fraction * n)` with halves rounded up.
pub fn train_count(n: usize, fraction: f64) -> usize {
    (((fraction * n as f64) + 0.5 + 1e-9).floor() as usize).min(n)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitBin {
    pub interval: String,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub seed: u64,
    pub bins: Vec<SplitBin>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Train,
    Test,
}

impl SplitPlan {
    pub fn side_of_module(&self, name: &str) -> Option<Side> {
        self.bins.iter().find_map(|b| {
            if b.train.iter().any(|m| m == name) {
                Some(Side::Train)
            } else if b.test.iter().any(|m| m == name) {
                Some(Side::Test)
            } else {
                None
            }
        })
    }

    /// A unit follows its first module's assignment.
    pub fn side_of_unit(&self, unit: &SourceUnit) -> Option<Side> {
        self.side_of_module(unit.module_names.first()?)
    }
}

/// Partition module names per length bin: sort, shuffle with a seeded PRNG,
/// take the first `round(fraction * N)` as train. Each unit contributes its
/// first module name, binned by the unit's line count; a name seen twice
/// keeps the bin of its first unit.
pub fn split(units: &[SourceUnit], seed: u64, fraction: f64) -> Result<SplitPlan, DatasetError> {
    let mut per_bin: Vec<BTreeSet<String>> = vec![BTreeSet::new(); BIN_LABELS.len()];
    let mut seen = BTreeSet::new();
    for u in units {
        let name = u.module_names.first().ok_or_else(|| DatasetError::NoModuleName(u.id.clone()))?;
        if seen.insert(name.clone()) {
            per_bin[length_bin(u.line_count)].insert(name.clone());
        }
    }
    let bins = per_bin
        .into_iter()
        .enumerate()
        .map(|(i, names)| {
            let mut names: Vec<String> = names.into_iter().collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            names.shuffle(&mut rng);
            let k = train_count(names.len(), fraction);
            let test = names.split_off(k);
            let mut train = names;
            let mut test = test;
            train.sort();
            test.sort();
            SplitBin { interval: BIN_LABELS[i].to_string(), train, test }
        })
        .collect();
    Ok(SplitPlan { seed, bins })
}

// ---------------------------------------------------------------------------
// JSONL

/// Provenance header written as the first line of CLI outputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Meta {
    pub tool_version: String,
    pub seed: u64,
    pub config_digest: String,
}

impl Meta {
    pub fn new(seed: u64, config_digest: &str) -> Self {
        Meta { tool_version: env!("CARGO_PKG_VERSION").to_string(), seed, config_digest: config_digest.to_string() }
    }

    pub fn to_value(&self) -> Value {
        serde_json::json!({ "_meta": self })
    }
}

fn is_meta_line(v: &Value) -> bool {
    v.as_object().is_some_and(|o| o.len() == 1 && o.contains_key("_meta"))
}

pub fn to_jsonl<T: Serialize>(records: &[T], meta: Option<&Meta>) -> String {
    let mut out = String::new();
    if let Some(m) = meta {
        out.push_str(&m.to_value().to_string());
        out.push('\n');
    }
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T], meta: Option<&Meta>) -> Result<(), DatasetError> {
    let io = |source| DatasetError::Io { path: path.to_path_buf(), source };
    let mut f = std::fs::File::create(path).map_err(io)?;
    f.write_all(to_jsonl(records, meta).as_bytes()).map_err(io)?;
    Ok(())
}

/// Parse JSONL text; blank lines and a `_meta` header are skipped. Errors
/// carry the 1-based physical line number.
pub fn parse_jsonl<T: DeserializeOwned>(text: &str) -> Result<Vec<T>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let schema = |e: serde_json::Error| DatasetError::Schema { line: i + 1, message: e.to_string() };
        let v: Value = serde_json::from_str(line).map_err(schema)?;
        if is_meta_line(&v) {
            continue;
        }
        out.push(serde_json::from_value(v).map_err(schema)?);
    }
    Ok(out)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })?;
    parse_jsonl(&text)
}
