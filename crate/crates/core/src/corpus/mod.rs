//! Corpus ingestion: tokenized source units, the filtering rules applied to
//! raw Verilog, and content-based deduplication.

pub mod lexer;

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use lexer::{tokenize, Token, TokenKind};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("corpus directory {0} does not exist")]
    MissingDir(PathBuf),
    #[error("failed to read {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0} is not valid UTF-8")]
    NotUtf8(PathBuf),
}

/// SHA-256 over the token stream with comments and whitespace removed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DedupKey(pub [u8; 32]);

impl fmt::Display for DedupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl Serialize for DedupKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DedupKey {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let bytes = hex::decode(&s).map_err(serde::de::Error::custom)?;
        let arr: [u8; 32] = bytes.try_into().map_err(|_| serde::de::Error::custom("dedup key must be 32 bytes"))?;
        Ok(DedupKey(arr))
    }
}

impl DedupKey {
    pub fn of_tokens(tokens: &[Token]) -> Self {
        let mut hasher = Sha256::new();
        for tok in tokens.iter().filter(|t| !t.is_trivia()) {
            hasher.update(tok.text.as_bytes());
            // separator keeps "ab" "c" distinct from "a" "bc"
            hasher.update([0u8]);
        }
        DedupKey(hasher.finalize().into())
    }
}

/// One Verilog source file after tokenization.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceUnit {
    pub id: String,
    pub path: PathBuf,
    pub text: String,
    pub tokens: Vec<Token>,
    pub module_names: Vec<String>,
    pub line_count: usize,
    pub dedup_key: DedupKey,
}

impl SourceUnit {
    pub fn new(id: impl Into<String>, path: impl Into<PathBuf>, text: impl Into<String>) -> Self {
        let text = text.into();
        let tokens = tokenize(&text);
        let module_names = module_names_of(&tokens);
        let line_count = count_lines(&text);
        let dedup_key = DedupKey::of_tokens(&tokens);
        SourceUnit { id: id.into(), path: path.into(), text, tokens, module_names, line_count, dedup_key }
    }

    /// Tokens other than whitespace and comments.
    pub fn code_tokens(&self) -> impl Iterator<Item = &Token> {
        self.tokens.iter().filter(|t| !t.is_trivia())
    }
}

/// Physical line count; a trailing newline does not open a new line.
pub fn count_lines(text: &str) -> usize {
    text.lines().count()
}

fn module_names_of(tokens: &[Token]) -> Vec<String> {
    let code: Vec<&Token> = tokens.iter().filter(|t| !t.is_trivia()).collect();
    code.windows(2)
        .filter(|w| w[0].is_keyword("module") && w[1].kind == TokenKind::Identifier)
        .map(|w| w[1].text.clone())
        .collect()
}

/// Identifiers immediately following a `module` keyword, in source order.
pub fn extract_modules(unit: &SourceUnit) -> Vec<String> {
    module_names_of(&unit.tokens)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectionCode {
    MissingModuleBoundary,
    NoFunctionalLogic,
    Duplicate,
    SyntaxError,
}

impl RejectionCode {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectionCode::MissingModuleBoundary => "missing_module_boundary",
            RejectionCode::NoFunctionalLogic => "no_functional_logic",
            RejectionCode::Duplicate => "duplicate",
            RejectionCode::SyntaxError => "syntax_error",
        }
    }
}

impl fmt::Display for RejectionCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectionReason {
    pub code: RejectionCode,
    pub detail: String,
}

impl RejectionReason {
    pub fn new(code: RejectionCode, detail: impl Into<String>) -> Self {
        RejectionReason { code, detail: detail.into() }
    }
}

const PROCEDURAL: &[&str] = &["always", "always_ff", "always_comb", "always_latch"];
const CONTROL_FLOW: &[&str] = &["if", "case", "casex", "casez", "for", "while", "repeat", "forever", "wait"];

/// Decide whether a tokenized unit passes the structural filters.
///
/// Duplicates are not detected here; see [`dedup`].
pub fn classify_rejection(unit: &SourceUnit) -> Option<RejectionReason> {
    let code: Vec<&Token> = unit.code_tokens().collect();
    let has_module = code.iter().any(|t| t.is_keyword("module"));
    let has_end = code.iter().any(|t| t.is_keyword("endmodule"));
    if !has_module || !has_end {
        let missing = match (has_module, has_end) {
            (false, false) => "`module` and `endmodule`",
            (false, true) => "`module`",
            _ => "`endmodule`",
        };
        return Some(RejectionReason::new(RejectionCode::MissingModuleBoundary, format!("missing {missing}")));
    }
    match functional_evidence(&code) {
        Some(_) => None,
        None => Some(RejectionReason::new(
            RejectionCode::NoFunctionalLogic,
            "only declarations, constant assignments or port wiring",
        )),
    }
}

/// Returns a short description of the first construct that counts as
/// functional logic, if any.
fn functional_evidence(code: &[&Token]) -> Option<String> {
    for (i, tok) in code.iter().enumerate() {
        if tok.kind == TokenKind::Keyword {
            let word = tok.text.as_str();
            if PROCEDURAL.contains(&word) || CONTROL_FLOW.contains(&word) {
                return Some(word.to_string());
            }
            if word == "initial" && initial_has_behaviour(&code[i + 1..]) {
                return Some("initial".into());
            }
            if word == "assign" && assign_has_expression(&code[i + 1..]) {
                return Some("assign expression".into());
            }
        }
        if is_instantiation(code, i) {
            return Some(format!("instance of {}", tok.text));
        }
    }
    None
}

/// An `initial` block counts when it does more than assign values: delays,
/// event controls, task calls or nested blocks with control flow.
fn initial_has_behaviour(rest: &[&Token]) -> bool {
    let mut depth = 0i32;
    for tok in rest {
        if tok.is_keyword("begin") {
            depth += 1;
        } else if tok.is_keyword("end") {
            depth -= 1;
            if depth <= 0 {
                return false;
            }
        } else if tok.is_punct("#") || tok.is_punct("@") || tok.text.starts_with('$') {
            return true;
        } else if tok.is_punct(";") && depth == 0 {
            return false;
        }
    }
    false
}

/// `assign lhs = rhs;` where the right-hand side contains an operator.
fn assign_has_expression(rest: &[&Token]) -> bool {
    let Some(eq) = rest.iter().position(|t| t.is_op("=")) else {
        return false;
    };
    rest[eq + 1..].iter().take_while(|t| !t.is_punct(";")).any(|t| t.kind == TokenKind::Operator)
}

/// `type [#( ... )] name (` at the start of a statement.
fn is_instantiation(code: &[&Token], i: usize) -> bool {
    if code[i].kind != TokenKind::Identifier || code[i].text.starts_with('$') {
        return false;
    }
    let at_statement_start = i > 0
        && (code[i - 1].is_punct(";")
            || ["begin", "end", "generate", "else"].iter().any(|k| code[i - 1].is_keyword(k)));
    if !at_statement_start {
        return false;
    }
    let mut j = i + 1;
    if code.get(j).is_some_and(|t| t.is_punct("#")) {
        j += 1;
        if !code.get(j).is_some_and(|t| t.is_punct("(")) {
            return false;
        }
        let mut depth = 0;
        while let Some(t) = code.get(j) {
            if t.is_punct("(") {
                depth += 1;
            } else if t.is_punct(")") {
                depth -= 1;
                if depth == 0 {
                    break;
                }
            }
            j += 1;
        }
        j += 1;
    }
    code.get(j).is_some_and(|t| t.kind == TokenKind::Identifier) && code.get(j + 1).is_some_and(|t| t.is_punct("("))
}

/// Keep the first unit of every dedup key; later ones are returned as
/// rejected duplicates. Input order is preserved in both lists.
pub fn dedup(units: Vec<SourceUnit>) -> (Vec<SourceUnit>, Vec<(SourceUnit, RejectionReason)>) {
    let mut seen: std::collections::HashMap<DedupKey, String> = std::collections::HashMap::new();
    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    for unit in units {
        match seen.get(&unit.dedup_key) {
            Some(first) => {
                let reason = RejectionReason::new(RejectionCode::Duplicate, format!("duplicate of {first}"));
                rejected.push((unit, reason));
            }
            None => {
                seen.insert(unit.dedup_key, unit.id.clone());
                kept.push(unit);
            }
        }
    }
    (kept, rejected)
}

pub const SOURCE_EXTENSIONS: &[&str] = &["v", "sv"];

/// Load every `*.v` / `*.sv` file under `root`, sorted by relative path.
/// Unit ids are the `/`-separated path relative to `root`.
pub fn load_dir(root: &Path) -> Result<Vec<SourceUnit>, CorpusError> {
    if !root.is_dir() {
        return Err(CorpusError::MissingDir(root.to_path_buf()));
    }
    let mut units = Vec::new();
    for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| CorpusError::Io { path: root.to_path_buf(), source: e.into() })?;
        let path = entry.path();
        let is_source = path.extension().and_then(|e| e.to_str()).is_some_and(|e| SOURCE_EXTENSIONS.contains(&e));
        if !entry.file_type().is_file() || !is_source {
            continue;
        }
        let rel = path.strip_prefix(root).unwrap_or(path);
        let id = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        let bytes = std::fs::read(path).map_err(|source| CorpusError::Io { path: path.to_path_buf(), source })?;
        let text = String::from_utf8(bytes).map_err(|_| CorpusError::NotUtf8(path.to_path_buf()))?;
        units.push(SourceUnit::new(id, rel, text));
    }
    Ok(units)
}

/// One line of the filter report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterEntry {
    pub id: String,
    pub path: String,
    pub status: String,
    pub detail: String,
}

pub const STATUS_ACCEPTED: &str = "accepted";

/// Apply the boundary, functional-logic and duplicate filters in that order.
/// Returns the report (one entry per input unit, input order) and the
/// accepted units.
pub fn filter_units(units: Vec<SourceUnit>) -> (Vec<FilterEntry>, Vec<SourceUnit>) {
    let mut verdicts: Vec<(String, String, Option<RejectionReason>)> = Vec::new();
    let mut structurally_ok = Vec::new();
    for unit in units {
        let reason = classify_rejection(&unit);
        verdicts.push((unit.id.clone(), unit.path.to_string_lossy().replace('\\', "/"), reason.clone()));
        if reason.is_none() {
            structurally_ok.push(unit);
        }
    }
    let (kept, dups) = dedup(structurally_ok);
    let dup_ids: std::collections::HashMap<String, RejectionReason> =
        dups.into_iter().map(|(u, r)| (u.id, r)).collect();
    let kept_ids: HashSet<&str> = kept.iter().map(|u| u.id.as_str()).collect();
    let report = verdicts
        .into_iter()
        .map(|(id, path, reason)| {
            let reason = reason.or_else(|| dup_ids.get(&id).cloned());
            let (status, detail) = match reason {
                Some(r) => (r.code.as_str().to_string(), r.detail),
                None => {
                    debug_assert!(kept_ids.contains(id.as_str()));
                    (STATUS_ACCEPTED.to_string(), String::new())
                }
            };
            FilterEntry { id, path, status, detail }
        })
        .collect();
    (report, kept)
}
