//! Single-line bug injection.
//!
//! Every mutation is a token-local edit on one source line, tagged with the
//! syntactic class of the bug (`Var`, `Value`, `Op`, `Cond`, `Non_cond`) and,
//! once an assertion is attached, whether the mutated line drives a signal
//! the assertion observes (`Direct`) or not (`Indirect`).
//!
//! The engine works on the token stream only. A lightweight scan marks
//! expression zones (assignment sides, condition expressions, sensitivity
//! lists, declaration ranges); mutation candidates are drawn from tokens
//! inside those zones and a 64-bit seed picks one deterministically.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, SourceUnit, Token, TokenKind};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum MutateError {
    #[error("line {line} admits no distinct {kind} replacement")]
    NoAlternative { line: usize, kind: SyntacticKind },
    #[error("line {0} is outside the unit")]
    LineOutOfRange(usize),
    #[error("assertion text does not parse: {0}")]
    ParseFailure(String),
    #[error("record does not match source line {line}")]
    SnippetMismatch { line: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SyntacticKind {
    Var,
    Value,
    Op,
    Cond,
    #[serde(rename = "Non_cond")]
    NonCond,
}

impl SyntacticKind {
    pub const ALL: [SyntacticKind; 5] =
        [SyntacticKind::Var, SyntacticKind::Value, SyntacticKind::Op, SyntacticKind::Cond, SyntacticKind::NonCond];

    pub fn as_str(self) -> &'static str {
        match self {
            SyntacticKind::Var => "Var",
            SyntacticKind::Value => "Value",
            SyntacticKind::Op => "Op",
            SyntacticKind::Cond => "Cond",
            SyntacticKind::NonCond => "Non_cond",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        SyntacticKind::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl fmt::Display for SyntacticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Relation {
    Direct,
    Indirect,
    Unknown,
}

impl Relation {
    pub fn as_str(self) -> &'static str {
        match self {
            Relation::Direct => "Direct",
            Relation::Indirect => "Indirect",
            Relation::Unknown => "Unknown",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Relation::Direct, Relation::Indirect, Relation::Unknown].into_iter().find(|r| r.as_str() == s)
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BugType {
    pub syntactic: SyntacticKind,
    pub relation: Relation,
}

/// A single injected bug.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MutationRecord {
    pub unit_id: String,
    /// 1-based line in the original unit.
    pub line: usize,
    pub original_snippet: String,
    pub mutated_snippet: String,
    pub bug_type: BugType,
    pub lhs_targets: BTreeSet<String>,
    pub rng_seed: u64,
    pub detail: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct MutationWire {
    unit_id: String,
    line: usize,
    original: String,
    mutated: String,
    syntactic: SyntacticKind,
    relation: Relation,
    seed: u64,
    #[serde(default)]
    lhs_targets: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    detail: Option<String>,
}

impl Serialize for MutationRecord {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        MutationWire {
            unit_id: self.unit_id.clone(),
            line: self.line,
            original: self.original_snippet.clone(),
            mutated: self.mutated_snippet.clone(),
            syntactic: self.bug_type.syntactic,
            relation: self.bug_type.relation,
            seed: self.rng_seed,
            lhs_targets: self.lhs_targets.clone(),
            detail: self.detail.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for MutationRecord {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let w = MutationWire::deserialize(d)?;
        Ok(MutationRecord {
            unit_id: w.unit_id,
            line: w.line,
            original_snippet: w.original,
            mutated_snippet: w.mutated,
            bug_type: BugType { syntactic: w.syntactic, relation: w.relation },
            lhs_targets: w.lhs_targets,
            rng_seed: w.seed,
            detail: w.detail,
        })
    }
}

impl MutationRecord {
    /// Replace the recorded line in `text`. Fails if the line no longer
    /// matches `original_snippet`.
    pub fn apply(&self, text: &str) -> Result<String, MutateError> {
        replace_line(text, self.line, &self.original_snippet, &self.mutated_snippet)
    }

    /// Undo the mutation on mutated text.
    pub fn revert(&self, text: &str) -> Result<String, MutateError> {
        replace_line(text, self.line, &self.mutated_snippet, &self.original_snippet)
    }

    pub fn with_relation(mut self, assertion: &AssertionSpec) -> Self {
        self.bug_type.relation = classify_relation(&self, assertion);
        self
    }
}

fn replace_line(text: &str, line: usize, expect: &str, with: &str) -> Result<String, MutateError> {
    let mut lines: Vec<&str> = text.split('\n').collect();
    let slot = lines.get_mut(line.wrapping_sub(1)).ok_or(MutateError::LineOutOfRange(line))?;
    let (body, cr) = match slot.strip_suffix('\r') {
        Some(b) => (b, "\r"),
        None => (*slot, ""),
    };
    if body != expect {
        return Err(MutateError::SnippetMismatch { line });
    }
    let replaced = format!("{with}{cr}");
    let mut out = String::with_capacity(text.len() + with.len());
    for (i, l) in lines.iter_mut().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        if i + 1 == line {
            out.push_str(&replaced);
        } else {
            out.push_str(l);
        }
    }
    Ok(out)
}

/// Text of 1-based `line`, without a trailing `\r`.
pub fn line_text(text: &str, line: usize) -> Option<&str> {
    text.split('\n').nth(line.checked_sub(1)?).map(|l| l.strip_suffix('\r').unwrap_or(l))
}

// ---------------------------------------------------------------------------
// Assertions

/// An assertion attached to a unit, inserted on its own line before
/// `endmodule`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssertionSpec {
    pub sva_text: String,
    /// 1-based line the assertion occupies after insertion.
    pub insertion_line: usize,
    pub referenced_signals: BTreeSet<String>,
}

impl AssertionSpec {
    /// Prepare `sva_text` for insertion before the `endmodule` closing the
    /// first module of `text`.
    pub fn for_source(sva_text: &str, text: &str) -> Result<Self, MutateError> {
        let sva_text = sva_text.trim().to_string();
        let referenced_signals = extract_referenced_signals(&sva_text)?;
        let anchor =
            endmodule_anchor(text).ok_or_else(|| MutateError::ParseFailure("source has no endmodule".into()))?;
        let insertion_line = if anchor.first_on_line { anchor.line } else { anchor.line + 1 };
        Ok(AssertionSpec { sva_text, insertion_line, referenced_signals })
    }

    /// Source with the assertion inserted.
    pub fn insert_into(&self, text: &str) -> Result<String, MutateError> {
        let anchor =
            endmodule_anchor(text).ok_or_else(|| MutateError::ParseFailure("source has no endmodule".into()))?;
        let mut out = String::with_capacity(text.len() + self.sva_text.len() + 2);
        if anchor.first_on_line {
            out.push_str(&text[..anchor.line_start]);
            out.push_str(&self.sva_text);
            out.push('\n');
            out.push_str(&text[anchor.line_start..]);
        } else {
            out.push_str(&text[..anchor.offset]);
            out.push('\n');
            out.push_str(&self.sva_text);
            out.push('\n');
            out.push_str(&text[anchor.offset..]);
        }
        Ok(out)
    }

    /// Where a line of the original text ends up after [`Self::insert_into`].
    pub fn map_line(&self, text: &str, line: usize) -> usize {
        match endmodule_anchor(text) {
            Some(a) if a.first_on_line && line >= a.line => line + 1,
            Some(a) if !a.first_on_line && line > a.line => line + 2,
            _ => line,
        }
    }
}

struct Anchor {
    line: usize,
    offset: usize,
    line_start: usize,
    first_on_line: bool,
}

fn endmodule_anchor(text: &str) -> Option<Anchor> {
    let mut offset = 0;
    let mut first_on_line = true;
    let mut line_start = 0;
    for tok in tokenize(text) {
        if tok.is_keyword("endmodule") {
            return Some(Anchor { line: tok.line, offset, line_start, first_on_line });
        }
        if tok.kind == TokenKind::Whitespace {
            if let Some(nl) = tok.text.rfind('\n') {
                first_on_line = true;
                line_start = offset + nl + 1;
            }
        } else {
            first_on_line = false;
        }
        offset += tok.text.len();
    }
    None
}

/// Signals named in an assertion: identifiers, minus keywords, system
/// functions and a leading `label:`.
pub fn extract_referenced_signals(sva_text: &str) -> Result<BTreeSet<String>, MutateError> {
    let toks: Vec<Token> = tokenize(sva_text).into_iter().filter(|t| !t.is_trivia()).collect();
    let mut stack = Vec::new();
    for t in toks.iter().filter(|t| t.kind == TokenKind::Punctuation) {
        match t.text.as_str() {
            "(" | "[" | "{" => stack.push(t.text.clone()),
            ")" | "]" | "}" => {
                let want = match t.text.as_str() {
                    ")" => "(",
                    "]" => "[",
                    _ => "{",
                };
                if stack.pop().as_deref() != Some(want) {
                    return Err(MutateError::ParseFailure(format!("unbalanced `{}`", t.text)));
                }
            }
            _ => {}
        }
    }
    if let Some(open) = stack.pop() {
        return Err(MutateError::ParseFailure(format!("unclosed `{open}`")));
    }
    let label = match (toks.first(), toks.get(1)) {
        (Some(a), Some(b)) if a.kind == TokenKind::Identifier && b.is_op(":") => Some(0),
        _ => None,
    };
    Ok(toks
        .iter()
        .enumerate()
        .filter(|(i, t)| {
            t.kind == TokenKind::Identifier
                && !t.text.starts_with('$')
                && Some(*i) != label
                && !(*i > 0 && toks[i - 1].is_punct("."))
        })
        .map(|(_, t)| t.text.clone())
        .collect())
}

/// `Direct` iff the mutated line drives a signal the assertion references.
pub fn classify_relation(record: &MutationRecord, assertion: &AssertionSpec) -> Relation {
    if record.lhs_targets.iter().any(|t| assertion.referenced_signals.contains(t)) {
        Relation::Direct
    } else {
        Relation::Indirect
    }
}

// ---------------------------------------------------------------------------
// Zone analysis

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ZoneKind {
    Lhs,
    Rhs,
    /// Condition of `if`/`while`.
    Cond,
    /// Selector of `case`.
    CaseSel,
    /// Sensitivity list of an `always` block.
    Sens,
    /// `[msb:lsb]` range of a declaration.
    DeclRange,
}

#[derive(Debug, Clone)]
struct Zone {
    kind: ZoneKind,
    /// Code-token index range, end exclusive.
    start: usize,
    end: usize,
    targets: BTreeSet<String>,
}

#[derive(Debug, Clone)]
struct CodeTok<'a> {
    tok: &'a Token,
    offset: usize,
}

struct Analysis<'a> {
    text: &'a str,
    code: Vec<CodeTok<'a>>,
    zones: Vec<Zone>,
    /// Per module span (code-token index range) the declared names.
    scopes: Vec<(usize, usize, BTreeSet<String>)>,
    /// Per scope the names a `Var` edit may substitute.
    scope_names: Vec<BTreeSet<String>>,
    header_lines: BTreeSet<usize>,
    /// Byte offset of each line start.
    line_starts: Vec<usize>,
    /// Zone indices touching each line.
    zones_by_line: BTreeMap<usize, Vec<usize>>,
}

const DECL_KEYWORDS: &[&str] = &[
    "input",
    "output",
    "inout",
    "wire",
    "reg",
    "logic",
    "integer",
    "parameter",
    "localparam",
    "genvar",
    "tri",
    "supply0",
    "supply1",
    "bit",
    "int",
];

const SWAP_CLASSES: &[&[&str]] =
    &[&["|", "&", "^"], &["+", "-"], &["==", "!="], &["<", ">", "<=", ">="], &["<<", ">>"]];

fn swap_class(op: &str) -> Option<&'static [&'static str]> {
    SWAP_CLASSES.iter().copied().find(|c| c.contains(&op))
}

fn matching_close(code: &[CodeTok], open: usize) -> Option<usize> {
    let (o, c) = match code[open].tok.text.as_str() {
        "(" => ("(", ")"),
        "[" => ("[", "]"),
        "{" => ("{", "}"),
        _ => return None,
    };
    let mut depth = 0usize;
    for (i, ct) in code.iter().enumerate().skip(open) {
        if ct.tok.is_punct(o) {
            depth += 1;
        } else if ct.tok.is_punct(c) {
            depth -= 1;
            if depth == 0 {
                return Some(i);
            }
        }
    }
    None
}

fn is_assign_op(t: &Token) -> bool {
    t.is_op("=") || t.is_op("<=")
}

fn idents_in(code: &[CodeTok], start: usize, end: usize, skip_brackets: bool) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut depth = 0i32;
    for ct in &code[start..end] {
        if ct.tok.is_punct("[") {
            depth += 1;
        } else if ct.tok.is_punct("]") {
            depth -= 1;
        } else if ct.tok.kind == TokenKind::Identifier
            && !ct.tok.text.starts_with('$')
            && (!skip_brackets || depth == 0)
        {
            out.insert(ct.tok.text.clone());
        }
    }
    out
}

impl<'a> Analysis<'a> {
    fn new(unit: &'a SourceUnit) -> Self {
        let mut offset = 0;
        let mut code = Vec::new();
        for tok in &unit.tokens {
            if !tok.is_trivia() {
                code.push(CodeTok { tok, offset });
            }
            offset += tok.text.len();
        }
        let line_starts = std::iter::once(0).chain(unit.text.match_indices('\n').map(|(i, _)| i + 1)).collect();
        let mut a = Analysis {
            text: &unit.text,
            code,
            zones: Vec::new(),
            scopes: Vec::new(),
            scope_names: Vec::new(),
            header_lines: BTreeSet::new(),
            line_starts,
            zones_by_line: BTreeMap::new(),
        };
        a.scan_modules();
        a.scan_assignments();
        a.scan_conditions();
        a.scan_declarations();
        a.scope_names = (0..a.scopes.len()).map(|s| a.names_for_scope(s)).collect();
        for (zi, z) in a.zones.iter().enumerate() {
            let lines: BTreeSet<usize> = (z.start..z.end).map(|i| a.code[i].tok.line).collect();
            for l in lines {
                a.zones_by_line.entry(l).or_default().push(zi);
            }
        }
        a
    }

    fn tok(&self, i: usize) -> Option<&Token> {
        self.code.get(i).map(|c| c.tok)
    }

    fn scan_modules(&mut self) {
        let mut i = 0;
        while i < self.code.len() {
            if self.code[i].tok.is_keyword("module") {
                let start = i;
                // ANSI port lines below the `module` line stay ordinary
                // declaration lines.
                self.header_lines.insert(self.code[start].tok.line);
                let end =
                    (i..self.code.len()).find(|&j| self.code[j].tok.is_keyword("endmodule")).unwrap_or(self.code.len());
                self.scopes.push((start, end, BTreeSet::new()));
                i = end;
            }
            i += 1;
        }
        if self.scopes.is_empty() {
            self.scopes.push((0, self.code.len(), BTreeSet::new()));
        }
    }

    fn scope_of(&self, idx: usize) -> usize {
        self.scopes.iter().position(|(s, e, _)| idx >= *s && idx <= *e).unwrap_or(0)
    }

    /// Assignment statements: the first `=`/`<=` at nesting depth zero after
    /// a statement boundary.
    fn scan_assignments(&mut self) {
        let code = &self.code;
        let mut depth = 0i32;
        let mut assign_seen = false;
        let mut zones = Vec::new();
        let mut i = 0;
        while i < code.len() {
            let t = code[i].tok;
            match t.kind {
                TokenKind::Punctuation if matches!(t.text.as_str(), "(" | "[" | "{") => depth += 1,
                TokenKind::Punctuation if matches!(t.text.as_str(), ")" | "]" | "}") => {
                    depth -= 1;
                    if depth == 0 && t.text == ")" {
                        assign_seen = false;
                    }
                }
                TokenKind::Punctuation if t.text == ";" && depth <= 0 => {
                    depth = 0;
                    assign_seen = false;
                }
                TokenKind::Keyword
                    if matches!(
                        t.text.as_str(),
                        "begin" | "end" | "else" | "endcase" | "default" | "assign" | "module"
                    ) =>
                {
                    assign_seen = false
                }
                TokenKind::Operator if depth == 0 && !assign_seen && is_assign_op(t) => {
                    assign_seen = true;
                    let lhs_start = lhs_start(code, i);
                    let mut rhs_end = i + 1;
                    let mut d = 0i32;
                    while rhs_end < code.len() {
                        let r = code[rhs_end].tok;
                        if r.is_punct("(") || r.is_punct("[") || r.is_punct("{") {
                            d += 1;
                        } else if r.is_punct(")") || r.is_punct("]") || r.is_punct("}") {
                            d -= 1;
                            if d < 0 {
                                break;
                            }
                        } else if d == 0 && (r.is_punct(";") || r.is_punct(",") || r.kind == TokenKind::Keyword) {
                            break;
                        }
                        rhs_end += 1;
                    }
                    let targets = idents_in(code, lhs_start, i, true);
                    if lhs_start < i && rhs_end > i + 1 {
                        zones.push(Zone { kind: ZoneKind::Lhs, start: lhs_start, end: i, targets: targets.clone() });
                        zones.push(Zone { kind: ZoneKind::Rhs, start: i + 1, end: rhs_end, targets });
                    }
                }
                _ => {}
            }
            i += 1;
        }
        self.zones.extend(zones);
    }

    fn scan_conditions(&mut self) {
        let mut zones = Vec::new();
        for i in 0..self.code.len() {
            let t = self.code[i].tok;
            if t.kind != TokenKind::Keyword {
                continue;
            }
            let word = t.text.as_str();
            match word {
                "if" | "while" | "case" | "casex" | "casez" => {
                    let Some(open) = (i + 1 < self.code.len() && self.code[i + 1].tok.is_punct("(")).then_some(i + 1)
                    else {
                        continue;
                    };
                    let Some(close) = matching_close(&self.code, open) else { continue };
                    let targets = self.statement_targets(i).1;
                    let kind = if word.starts_with("case") { ZoneKind::CaseSel } else { ZoneKind::Cond };
                    zones.push(Zone { kind, start: open + 1, end: close, targets });
                }
                "always" | "always_ff" | "always_latch" => {
                    if !self.tok(i + 1).is_some_and(|t| t.is_punct("@")) {
                        continue;
                    }
                    if !self.tok(i + 2).is_some_and(|t| t.is_punct("(")) {
                        continue;
                    }
                    let Some(close) = matching_close(&self.code, i + 2) else { continue };
                    let (_, targets) = self.statement_targets(i + 1);
                    zones.push(Zone { kind: ZoneKind::Sens, start: i + 3, end: close, targets });
                }
                _ => {}
            }
        }
        self.zones.extend(zones);
    }

    fn scan_declarations(&mut self) {
        let mut zones = Vec::new();
        let mut i = 0;
        while i < self.code.len() {
            let t = self.code[i].tok;
            if t.kind == TokenKind::Keyword && DECL_KEYWORDS.contains(&t.text.as_str()) {
                let mut j = i + 1;
                let mut names = BTreeSet::new();
                let mut ranges = Vec::new();
                let mut in_init = false;
                let mut paren = 0i32;
                while j < self.code.len() {
                    let c = self.code[j].tok;
                    if c.is_punct(";") {
                        break;
                    }
                    if c.kind == TokenKind::Keyword && DECL_KEYWORDS.contains(&c.text.as_str()) {
                        break;
                    }
                    if c.is_punct("(") || c.is_punct("{") {
                        paren += 1;
                    } else if c.is_punct(")") || c.is_punct("}") {
                        if paren == 0 {
                            break;
                        }
                        paren -= 1;
                    } else if c.is_punct("[") {
                        let close = matching_close(&self.code, j).unwrap_or(j);
                        if !in_init {
                            ranges.push((j + 1, close));
                        }
                        j = close;
                    } else if c.is_op("=") && paren == 0 {
                        in_init = true;
                    } else if c.is_punct(",") && paren == 0 {
                        in_init = false;
                    } else if c.kind == TokenKind::Identifier && !in_init && paren == 0 {
                        names.insert(c.text.clone());
                    }
                    j += 1;
                }
                let scope = self.scope_of(i);
                self.scopes[scope].2.extend(names.iter().cloned());
                for (s, e) in ranges {
                    if e > s {
                        zones.push(Zone { kind: ZoneKind::DeclRange, start: s, end: e, targets: names.clone() });
                    }
                }
                i = j;
                continue;
            }
            i += 1;
        }
        self.zones.extend(zones);
    }

    /// Parse one statement starting at code index `i`; returns the index
    /// after it and the assignment targets it contains.
    fn statement_targets(&self, i: usize) -> (usize, BTreeSet<String>) {
        let mut targets = BTreeSet::new();
        let end = self.statement(i, &mut targets, 0);
        (end, targets)
    }

    fn skip_parens(&self, i: usize) -> usize {
        if self.tok(i).is_some_and(|t| t.is_punct("(")) {
            matching_close(&self.code, i).map(|c| c + 1).unwrap_or(self.code.len())
        } else {
            i
        }
    }

    fn statement(&self, i: usize, targets: &mut BTreeSet<String>, level: usize) -> usize {
        let Some(t) = self.tok(i) else { return i };
        if level > 64 {
            return self.code.len();
        }
        if t.kind == TokenKind::Keyword {
            match t.text.as_str() {
                "begin" | "fork" => {
                    let closer = if t.text == "begin" { "end" } else { "join" };
                    let mut j = i + 1;
                    if self.tok(j).is_some_and(|t| t.is_op(":")) {
                        j += 2;
                    }
                    while let Some(n) = self.tok(j) {
                        if n.is_keyword(closer) {
                            return j + 1;
                        }
                        if n.is_keyword("endmodule") {
                            return j;
                        }
                        let next = self.statement(j, targets, level + 1);
                        j = if next == j { j + 1 } else { next };
                    }
                    return j;
                }
                "if" => {
                    let j = self.skip_parens(i + 1);
                    let mut j = self.statement(j, targets, level + 1);
                    if self.tok(j).is_some_and(|t| t.is_keyword("else")) {
                        j = self.statement(j + 1, targets, level + 1);
                    }
                    return j;
                }
                "case" | "casex" | "casez" => {
                    let mut j = self.skip_parens(i + 1);
                    while let Some(n) = self.tok(j) {
                        if n.is_keyword("endcase") {
                            return j + 1;
                        }
                        if n.is_keyword("endmodule") {
                            return j;
                        }
                        if n.is_keyword("default") {
                            j += 1;
                            if self.tok(j).is_some_and(|t| t.is_op(":")) {
                                j += 1;
                            }
                        } else {
                            // label list up to `:` at depth zero
                            let mut d = 0i32;
                            while let Some(l) = self.tok(j) {
                                if l.is_punct("(") || l.is_punct("[") || l.is_punct("{") {
                                    d += 1;
                                } else if l.is_punct(")") || l.is_punct("]") || l.is_punct("}") {
                                    d -= 1;
                                } else if (l.is_op(":") && d == 0) || l.is_keyword("endcase") || l.is_punct(";") {
                                    break;
                                }
                                j += 1;
                            }
                            if self.tok(j).is_some_and(|t| t.is_op(":")) {
                                j += 1;
                            } else {
                                continue;
                            }
                        }
                        let next = self.statement(j, targets, level + 1);
                        j = if next == j { j + 1 } else { next };
                    }
                    return j;
                }
                "for" | "while" | "repeat" => {
                    let j = self.skip_parens(i + 1);
                    return self.statement(j, targets, level + 1);
                }
                "forever" => return self.statement(i + 1, targets, level + 1),
                "end" | "endcase" | "endmodule" | "join" | "else" => return i,
                "always" | "always_ff" | "always_comb" | "always_latch" | "initial" => {
                    return self.statement(i + 1, targets, level + 1)
                }
                _ => {}
            }
        }
        if t.is_punct("@") {
            let j = i + 1;
            let j = match self.tok(j) {
                Some(n) if n.is_punct("(") => self.skip_parens(j),
                Some(_) => j + 1,
                None => j,
            };
            return self.statement(j, targets, level + 1);
        }
        if t.is_punct("#") {
            let j = i + 1;
            let j = match self.tok(j) {
                Some(n) if n.is_punct("(") => self.skip_parens(j),
                Some(_) => j + 1,
                None => j,
            };
            return self.statement(j, targets, level + 1);
        }
        if t.is_punct(";") {
            return i + 1;
        }
        // simple statement
        let mut j = i;
        let mut depth = 0i32;
        let mut assign_at = None;
        while let Some(n) = self.tok(j) {
            if n.is_punct("(") || n.is_punct("[") || n.is_punct("{") {
                depth += 1;
            } else if n.is_punct(")") || n.is_punct("]") || n.is_punct("}") {
                depth -= 1;
            } else if n.is_punct(";") && depth <= 0 {
                break;
            } else if n.is_keyword("end") || n.is_keyword("endmodule") || n.is_keyword("endcase") {
                if let Some(a) = assign_at {
                    targets.extend(idents_in(&self.code, lhs_start(&self.code, a), a, true));
                }
                return j;
            } else if depth == 0 && assign_at.is_none() && is_assign_op(n) {
                assign_at = Some(j);
            }
            j += 1;
        }
        if let Some(a) = assign_at {
            targets.extend(idents_in(&self.code, lhs_start(&self.code, a), a, true));
        }
        j + 1
    }

    fn line_of(&self, idx: usize) -> usize {
        self.code[idx].tok.line
    }

    fn line_start(&self, line: usize) -> usize {
        self.line_starts.get(line.saturating_sub(1)).copied().unwrap_or(self.text.len())
    }

    fn line(&self, line: usize) -> &'a str {
        let Some(&start) = self.line_starts.get(line.wrapping_sub(1)) else { return "" };
        let end = self.line_starts.get(line).map_or(self.text.len(), |e| e - 1);
        let body = &self.text[start..end];
        body.strip_suffix('\r').unwrap_or(body)
    }

    fn zone_on_line(&self, z: &Zone, line: usize) -> bool {
        (z.start..z.end).any(|i| self.line_of(i) == line)
    }

    fn in_scope_names(&self, idx: usize) -> &BTreeSet<String> {
        &self.scope_names[self.scope_of(idx)]
    }

    fn names_for_scope(&self, scope: usize) -> BTreeSet<String> {
        let (s, e, declared) = &self.scopes[scope];
        if !declared.is_empty() {
            return declared.clone();
        }
        let module_names: BTreeSet<&str> =
            self.code.windows(2).filter(|w| w[0].tok.is_keyword("module")).map(|w| w[1].tok.text.as_str()).collect();
        let end = (*e).min(self.code.len());
        self.code[*s..end]
            .iter()
            .filter(|c| c.tok.kind == TokenKind::Identifier && !c.tok.text.starts_with('$'))
            .filter(|c| !module_names.contains(c.tok.text.as_str()))
            .map(|c| c.tok.text.clone())
            .collect()
    }

    /// Candidate edits realizing `kind` on `line`, in a stable order.
    fn alternatives(&self, line: usize, kind: SyntacticKind) -> Vec<Edit> {
        if self.header_lines.contains(&line) {
            return Vec::new();
        }
        let mut edits = Vec::new();
        let on_line = self.zones_by_line.get(&line).map_or(&[][..], Vec::as_slice);
        for z in on_line.iter().map(|&zi| &self.zones[zi]) {
            match kind {
                SyntacticKind::Op => self.op_edits(z, line, &mut edits),
                SyntacticKind::Value => self.value_edits(z, line, &mut edits),
                SyntacticKind::Var => self.var_edits(z, line, &mut edits),
                SyntacticKind::Cond => self.cond_edits(z, line, &mut edits),
                SyntacticKind::NonCond => self.noncond_edits(z, line, &mut edits),
            }
        }
        // distinct resulting lines only, first occurrence wins
        let original = self.line(line).to_string();
        let mut seen = BTreeSet::new();
        edits.retain(|e| {
            let mutated = self.mutated_line(line, e);
            mutated != original && !mutated.contains('\n') && seen.insert(mutated)
        });
        edits
    }

    fn edit(&self, from: usize, to: usize, replacement: String, targets: &BTreeSet<String>) -> Edit {
        let start = self.code[from].offset;
        let last = &self.code[to - 1];
        Edit { start, end: last.offset + last.tok.text.len(), replacement, targets: targets.clone() }
    }

    fn op_edits(&self, z: &Zone, line: usize, out: &mut Vec<Edit>) {
        if !matches!(z.kind, ZoneKind::Rhs | ZoneKind::Cond | ZoneKind::CaseSel) {
            return;
        }
        for i in z.start..z.end {
            let t = self.code[i].tok;
            if t.kind != TokenKind::Operator || t.line != line {
                continue;
            }
            if let Some(class) = swap_class(&t.text) {
                for alt in class.iter().filter(|a| **a != t.text) {
                    out.push(self.edit(i, i + 1, alt.to_string(), &z.targets));
                }
            }
        }
    }

    fn value_edits(&self, z: &Zone, line: usize, out: &mut Vec<Edit>) {
        if z.kind == ZoneKind::Sens {
            return;
        }
        for i in z.start..z.end {
            let t = self.code[i].tok;
            if t.kind != TokenKind::Number || t.line != line {
                continue;
            }
            for alt in literal_variants(&t.text) {
                out.push(self.edit(i, i + 1, alt, &z.targets));
            }
        }
    }

    fn var_edits(&self, z: &Zone, line: usize, out: &mut Vec<Edit>) {
        if !matches!(z.kind, ZoneKind::Lhs | ZoneKind::Rhs | ZoneKind::Cond | ZoneKind::CaseSel) {
            return;
        }
        for i in z.start..z.end {
            let t = self.code[i].tok;
            if t.kind != TokenKind::Identifier || t.line != line || t.text.starts_with('$') {
                continue;
            }
            if self.tok(i + 1).is_some_and(|n| n.is_punct("(")) {
                continue; // function call
            }
            if i > 0 && self.code[i - 1].tok.is_punct(".") {
                continue;
            }
            for cand in self.in_scope_names(i).iter().filter(|c| **c != t.text) {
                let mut targets = z.targets.clone();
                if z.kind == ZoneKind::Lhs {
                    targets.insert(cand.clone());
                }
                out.push(self.edit(i, i + 1, cand.clone(), &targets));
            }
        }
    }

    fn cond_edits(&self, z: &Zone, line: usize, out: &mut Vec<Edit>) {
        match z.kind {
            ZoneKind::Cond => {
                let single_line = (z.start..z.end).all(|i| self.line_of(i) == line);
                if single_line && z.end > z.start {
                    let slice = &self.text
                        [self.code[z.start].offset..self.code[z.end - 1].offset + self.code[z.end - 1].tok.text.len()];
                    let n = z.end - z.start;
                    let first = self.code[z.start].tok;
                    let negated = if n == 1 {
                        format!("!{slice}")
                    } else if n == 2 && first.is_op("!") {
                        self.code[z.start + 1].tok.text.clone()
                    } else {
                        format!("!({slice})")
                    };
                    out.push(self.edit(z.start, z.end, negated, &z.targets));
                }
                for i in z.start..z.end {
                    let t = self.code[i].tok;
                    if t.line != line {
                        continue;
                    }
                    if t.is_op("&&") {
                        out.push(self.edit(i, i + 1, "||".into(), &z.targets));
                    } else if t.is_op("||") {
                        out.push(self.edit(i, i + 1, "&&".into(), &z.targets));
                    }
                }
            }
            ZoneKind::CaseSel => {
                if z.end == z.start + 1 && self.code[z.start].tok.kind == TokenKind::Identifier {
                    let t = self.code[z.start].tok;
                    if t.line == line {
                        out.push(self.edit(z.start, z.end, format!("~{}", t.text), &z.targets));
                    }
                }
            }
            ZoneKind::Sens => {
                for i in z.start..z.end {
                    let t = self.code[i].tok;
                    if t.line != line {
                        continue;
                    }
                    if t.is_keyword("posedge") {
                        out.push(self.edit(i, i + 1, "negedge".into(), &z.targets));
                    } else if t.is_keyword("negedge") {
                        out.push(self.edit(i, i + 1, "posedge".into(), &z.targets));
                    }
                }
            }
            _ => {}
        }
    }

    fn noncond_edits(&self, z: &Zone, line: usize, out: &mut Vec<Edit>) {
        if z.kind != ZoneKind::Rhs || z.end <= z.start {
            return;
        }
        if !(z.start..z.end).all(|i| self.line_of(i) == line) {
            return;
        }
        let first = &self.code[z.start];
        let last = &self.code[z.end - 1];
        let rhs = &self.text[first.offset..last.offset + last.tok.text.len()];
        let mut depth = 0;
        let mut simple = true;
        for ct in &self.code[z.start..z.end] {
            let t = ct.tok;
            if t.is_punct("(") || t.is_punct("[") || t.is_punct("{") {
                depth += 1;
            } else if t.is_punct(")") || t.is_punct("]") || t.is_punct("}") {
                depth -= 1;
            } else if t.kind == TokenKind::Operator && depth == 0 {
                simple = false;
            }
        }
        let operand = if simple { rhs.to_string() } else { format!("({rhs})") };
        for alt in [format!("{operand} + 1"), format!("{operand} - 1"), format!("~{operand}")] {
            out.push(self.edit(z.start, z.end, alt, &z.targets));
        }
    }

    fn mutated_line(&self, line: usize, e: &Edit) -> String {
        let start = self.line_start(line);
        let body = self.line(line);
        let s = e.start - start;
        let en = (e.end - start).min(body.len());
        format!("{}{}{}", &body[..s], e.replacement, &body[en..])
    }
}

fn lhs_start(code: &[CodeTok], op: usize) -> usize {
    let mut j = op;
    let mut depth = 0i32;
    while j > 0 {
        let t = code[j - 1].tok;
        if t.is_punct("]") || t.is_punct("}") {
            depth += 1;
        } else if t.is_punct("[") || t.is_punct("{") {
            if depth == 0 {
                break;
            }
            depth -= 1;
        } else if depth == 0 && !(t.kind == TokenKind::Identifier || t.is_punct(",") || t.is_punct(".")) {
            break;
        }
        j -= 1;
    }
    j
}

#[derive(Debug, Clone)]
struct Edit {
    start: usize,
    end: usize,
    replacement: String,
    targets: BTreeSet<String>,
}

/// Alternative spellings of a numeric literal: single-bit flips for based
/// binary/octal/hex literals, +/-1 for decimal ones.
fn literal_variants(lit: &str) -> Vec<String> {
    let Some(q) = lit.find('\'') else {
        return decimal_variants(lit, None).into_iter().collect();
    };
    let (size, rest) = lit.split_at(q);
    let rest = &rest[1..];
    let (signed, rest) = match rest.strip_prefix(['s', 'S']) {
        Some(r) => ("s", r),
        None => ("", rest),
    };
    let Some(base) = rest.chars().next() else { return Vec::new() };
    let digits = &rest[base.len_utf8()..];
    let prefix = format!("{size}'{signed}{base}");
    let width: Option<u32> = size.replace('_', "").parse().ok();
    match base.to_ascii_lowercase() {
        'b' | 'o' | 'h' => {
            let bits = match base.to_ascii_lowercase() {
                'b' => 1,
                'o' => 3,
                _ => 4,
            };
            let mut out = Vec::new();
            for (pos, ch) in digits.char_indices() {
                let Some(v) = ch.to_digit(1 << bits) else { continue };
                for b in 0..bits {
                    let flipped = v ^ (1 << b);
                    let mut d = char::from_digit(flipped, 1 << bits).unwrap();
                    if ch.is_ascii_uppercase() {
                        d = d.to_ascii_uppercase();
                    }
                    out.push(format!("{prefix}{}{d}{}", &digits[..pos], &digits[pos + ch.len_utf8()..]));
                }
            }
            out
        }
        'd' => decimal_variants(digits, width).into_iter().map(|d| format!("{prefix}{d}")).collect(),
        '0' | '1' if size.is_empty() && signed.is_empty() => {
            vec![if base == '0' { "'1".into() } else { "'0".into() }]
        }
        _ => Vec::new(),
    }
}

fn decimal_variants(digits: &str, width: Option<u32>) -> Vec<String> {
    let clean = digits.replace('_', "");
    if clean.is_empty() || !clean.chars().all(|c| c.is_ascii_digit()) {
        return Vec::new();
    }
    let Ok(v) = clean.parse::<u64>() else { return Vec::new() };
    let mut out = Vec::new();
    let max = width.filter(|w| *w < 64).map(|w| (1u64 << w) - 1);
    if max.is_none_or(|m| v < m) {
        out.push((v + 1).to_string());
    }
    if v > 0 {
        out.push((v - 1).to_string());
    }
    out
}

// ---------------------------------------------------------------------------
// Public API

/// A mutable line and the bug kinds it admits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Site {
    pub line: usize,
    pub kinds: Vec<SyntacticKind>,
}

/// Mutation front-end for one unit; analysis is computed once.
pub struct MutationEngine<'a> {
    unit: &'a SourceUnit,
    analysis: Analysis<'a>,
}

impl<'a> MutationEngine<'a> {
    pub fn new(unit: &'a SourceUnit) -> Self {
        MutationEngine { unit, analysis: Analysis::new(unit) }
    }

    pub fn sites(&self) -> Vec<Site> {
        let lines: BTreeSet<usize> =
            self.analysis.zones.iter().flat_map(|z| (z.start..z.end).map(|i| self.analysis.line_of(i))).collect();
        lines
            .into_iter()
            .filter_map(|line| {
                let kinds: Vec<_> = SyntacticKind::ALL
                    .into_iter()
                    .filter(|k| !self.analysis.alternatives(line, *k).is_empty())
                    .collect();
                (!kinds.is_empty()).then_some(Site { line, kinds })
            })
            .collect()
    }

    /// Number of distinct mutants of `kind` available on `line`.
    pub fn alternative_count(&self, line: usize, kind: SyntacticKind) -> usize {
        self.analysis.alternatives(line, kind).len()
    }

    pub fn apply(&self, line: usize, kind: SyntacticKind, seed: u64) -> Result<MutationRecord, MutateError> {
        let original = line_text(&self.unit.text, line).ok_or(MutateError::LineOutOfRange(line))?;
        if line == 0 || line > self.unit.line_count.max(1) {
            return Err(MutateError::LineOutOfRange(line));
        }
        let alts = self.analysis.alternatives(line, kind);
        if alts.is_empty() {
            return Err(MutateError::NoAlternative { line, kind });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pick = &alts[rng.random_range(0..alts.len())];
        let mutated = self.analysis.mutated_line(line, pick);
        let detail = pick
            .targets
            .is_empty()
            .then(|| "mutated line has no assignment target; relation defaults to Indirect".to_string());
        Ok(MutationRecord {
            unit_id: self.unit.id.clone(),
            line,
            original_snippet: original.to_string(),
            mutated_snippet: mutated,
            bug_type: BugType { syntactic: kind, relation: Relation::Unknown },
            lhs_targets: pick.targets.clone(),
            rng_seed: seed,
            detail,
        })
    }

    /// Build a record for an externally proposed replacement of `line`
    /// (e.g. an LLM-generated bug), inferring its syntactic class.
    pub fn record_for_replacement(&self, line: usize, mutated: &str, seed: u64) -> Result<MutationRecord, MutateError> {
        let original = line_text(&self.unit.text, line).ok_or(MutateError::LineOutOfRange(line))?;
        if original == mutated || mutated.contains('\n') {
            return Err(MutateError::NoAlternative { line, kind: SyntacticKind::NonCond });
        }
        let kind = infer_kind(original, mutated, self.line_has_condition(line));
        let targets = self.line_targets(line, kind == SyntacticKind::Cond);
        Ok(MutationRecord {
            unit_id: self.unit.id.clone(),
            line,
            original_snippet: original.to_string(),
            mutated_snippet: mutated.to_string(),
            bug_type: BugType { syntactic: kind, relation: Relation::Unknown },
            detail: targets.is_empty().then(|| "no assignment target on line".to_string()),
            lhs_targets: targets,
            rng_seed: seed,
        })
    }

    fn line_has_condition(&self, line: usize) -> bool {
        self.analysis.zones.iter().any(|z| {
            matches!(z.kind, ZoneKind::Cond | ZoneKind::Sens | ZoneKind::CaseSel) && self.analysis.zone_on_line(z, line)
        })
    }

    fn line_targets(&self, line: usize, conditional: bool) -> BTreeSet<String> {
        self.analysis
            .zones
            .iter()
            .filter(|z| self.analysis.zone_on_line(z, line))
            .filter(|z| {
                if conditional {
                    matches!(z.kind, ZoneKind::Cond | ZoneKind::Sens | ZoneKind::CaseSel)
                } else {
                    matches!(z.kind, ZoneKind::Lhs | ZoneKind::Rhs | ZoneKind::DeclRange)
                }
            })
            .flat_map(|z| z.targets.iter().cloned())
            .collect()
    }
}

fn infer_kind(original: &str, mutated: &str, has_condition: bool) -> SyntacticKind {
    let a: Vec<Token> = tokenize(original).into_iter().filter(|t| !t.is_trivia()).collect();
    let b: Vec<Token> = tokenize(mutated).into_iter().filter(|t| !t.is_trivia()).collect();
    let prefix = a.iter().zip(&b).take_while(|(x, y)| x.text == y.text).count();
    let suffix = a[prefix..].iter().rev().zip(b[prefix..].iter().rev()).take_while(|(x, y)| x.text == y.text).count();
    let da = &a[prefix..a.len() - suffix];
    let db = &b[prefix..b.len() - suffix];
    let cond_open = has_condition
        && a[..prefix]
            .iter()
            .any(|t| ["if", "while", "case", "casex", "casez", "always", "always_ff"].iter().any(|k| t.is_keyword(k)))
        && {
            // still inside the condition parentheses at the edit point
            let opens = a[..prefix].iter().filter(|t| t.is_punct("(")).count();
            let closes = a[..prefix].iter().filter(|t| t.is_punct(")")).count();
            opens > closes
        };
    if da.len() == 1 && db.len() == 1 && da[0].kind == db[0].kind {
        match da[0].kind {
            TokenKind::Operator if cond_open && matches!(da[0].text.as_str(), "&&" | "||") => {
                return SyntacticKind::Cond
            }
            TokenKind::Operator => return SyntacticKind::Op,
            TokenKind::Number => return SyntacticKind::Value,
            TokenKind::Identifier => return SyntacticKind::Var,
            TokenKind::Keyword if cond_open => return SyntacticKind::Cond,
            _ => {}
        }
    }
    if cond_open {
        SyntacticKind::Cond
    } else {
        SyntacticKind::NonCond
    }
}

/// Lines of `unit` that admit at least one mutation kind.
pub fn enumerate_sites(unit: &SourceUnit) -> Vec<Site> {
    MutationEngine::new(unit).sites()
}

/// Inject one bug of `kind` on `line`; `seed` selects among the candidates.
pub fn apply_mutation(
    unit: &SourceUnit,
    line: usize,
    kind: SyntacticKind,
    seed: u64,
) -> Result<MutationRecord, MutateError> {
    MutationEngine::new(unit).apply(line, kind, seed)
}

/// Draw up to `count` distinct mutations from `unit`, deterministically from
/// `seed`. Each record carries its own derived seed.
pub fn sample_mutations(unit: &SourceUnit, count: usize, seed: u64) -> Vec<MutationRecord> {
    let engine = MutationEngine::new(unit);
    let sites = engine.sites();
    let choices: Vec<(usize, SyntacticKind)> =
        sites.iter().flat_map(|s| s.kinds.iter().map(move |k| (s.line, *k))).collect();
    if choices.is_empty() {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<MutationRecord> = Vec::new();
    let mut attempts = 0;
    while out.len() < count && attempts < count * 8 {
        attempts += 1;
        let (line, kind) = choices[rng.random_range(0..choices.len())];
        let mseed: u64 = rng.random();
        let Ok(rec) = engine.apply(line, kind, mseed) else { continue };
        if out.iter().any(|r| r.line == rec.line && r.mutated_snippet == rec.mutated_snippet) {
            continue;
        }
        out.push(rec);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const TABLE_DESIGN: &str = "\
module ex(input clk, input valid, input [3:0] in, input a, input b, output reg [3:0] out, output reg [3:0] temp, output reg y);
always @(*)
  y = a | b;
always @(posedge clk) begin
  if (valid) out <= in;
  temp <= in;
end
endmodule
";

    fn unit(text: &str) -> SourceUnit {
        SourceUnit::new("ex", "ex.v", text)
    }

    fn reachable(unit: &SourceUnit, line: usize, kind: SyntacticKind, want: &str) -> bool {
        (0..2000).any(|s| apply_mutation(unit, line, kind, s).map(|r| r.mutated_snippet) == Ok(want.into()))
    }

    #[test]
    fn site_kinds_for_table_rows() {
        let u = unit("module t(input a, input b, output reg out);\nalways @*\n  out = a | b;\nendmodule\n");
        let sites = enumerate_sites(&u);
        let s = sites.iter().find(|s| s.line == 3).unwrap();
        assert_eq!(s.kinds, vec![SyntacticKind::Var, SyntacticKind::Op, SyntacticKind::NonCond]);
        assert!(sites.iter().all(|s| s.line != 4), "endmodule is not a site");

        let u = unit("module t(input a, output reg [3:0] out);\nalways @*\n  out = 4'b1010;\nendmodule\n");
        let s = enumerate_sites(&u).into_iter().find(|s| s.line == 3).unwrap();
        assert_eq!(s.kinds, vec![SyntacticKind::Var, SyntacticKind::Value, SyntacticKind::NonCond]);
    }

    #[test]
    fn op_swap_reaches_and() {
        let u = unit(TABLE_DESIGN);
        assert!(reachable(&u, 3, SyntacticKind::Op, "  y = a & b;"));
    }

    #[test]
    fn value_flip_reaches_table_example() {
        let u = unit("module t(output reg [3:0] out);\nalways @*\n  out = 4'b1010;\nendmodule\n");
        assert!(reachable(&u, 3, SyntacticKind::Value, "  out = 4'b1110;"));
        let all: BTreeSet<String> =
            (0..500).map(|s| apply_mutation(&u, 3, SyntacticKind::Value, s).unwrap().mutated_snippet).collect();
        assert_eq!(all.len(), 4, "one flip per bit: {all:?}");
    }

    #[test]
    fn cond_negation_reaches_table_example() {
        let u = unit(TABLE_DESIGN);
        assert!(reachable(&u, 5, SyntacticKind::Cond, "  if (!valid) out <= in;"));
        let r = apply_mutation(&u, 5, SyntacticKind::Cond, 1).unwrap();
        assert_eq!(r.lhs_targets, BTreeSet::from(["out".to_string()]));
    }

    #[test]
    fn edge_flip_on_always() {
        let u = unit(TABLE_DESIGN);
        let r = apply_mutation(&u, 4, SyntacticKind::Cond, 0).unwrap();
        assert_eq!(r.mutated_snippet, "always @(negedge clk) begin");
        assert_eq!(r.lhs_targets, BTreeSet::from(["out".to_string(), "temp".to_string()]));
    }

    #[test]
    fn noncond_reaches_plus_one() {
        let u = unit(TABLE_DESIGN);
        assert!(reachable(&u, 6, SyntacticKind::NonCond, "  temp <= in + 1;"));
        assert!(reachable(&u, 5, SyntacticKind::NonCond, "  if (valid) out <= in + 1;"));
    }

    #[test]
    fn direct_and_indirect_examples() {
        let u = unit(TABLE_DESIGN);
        let assertion = AssertionSpec::for_source("assert(out == in);", TABLE_DESIGN).unwrap();
        let direct = (0..200)
            .map(|s| apply_mutation(&u, 5, SyntacticKind::NonCond, s).unwrap())
            .find(|r| r.mutated_snippet.ends_with("out <= in + 1;"))
            .unwrap();
        assert_eq!(classify_relation(&direct, &assertion), Relation::Direct);
        let indirect = (0..200)
            .map(|s| apply_mutation(&u, 6, SyntacticKind::NonCond, s).unwrap())
            .find(|r| r.mutated_snippet == "  temp <= in + 1;")
            .unwrap();
        assert_eq!(classify_relation(&indirect, &assertion), Relation::Indirect);
    }

    #[test]
    fn empty_targets_are_indirect() {
        let rec = MutationRecord {
            unit_id: "u".into(),
            line: 1,
            original_snippet: "a".into(),
            mutated_snippet: "b".into(),
            bug_type: BugType { syntactic: SyntacticKind::Var, relation: Relation::Unknown },
            lhs_targets: BTreeSet::new(),
            rng_seed: 0,
            detail: None,
        };
        let a = AssertionSpec {
            sva_text: "assert(a);".into(),
            insertion_line: 1,
            referenced_signals: ["a".to_string()].into(),
        };
        assert_eq!(classify_relation(&rec, &a), Relation::Indirect);
    }

    #[test]
    fn referenced_signals() {
        let s = |t| extract_referenced_signals(t).unwrap().into_iter().collect::<Vec<_>>();
        assert_eq!(s("assert(out == in);"), ["in", "out"]);
        assert_eq!(s("assert property (@(posedge clk) a |-> b);"), ["a", "b", "clk"]);
        assert!(s("assert(1);").is_empty());
        assert_eq!(
            s("p_ok: assert property (@(posedge clk) disable iff (rst) $rose(req) |-> ##[1:3] ack);"),
            ["ack", "clk", "req", "rst"]
        );
        assert!(matches!(extract_referenced_signals("assert((a);"), Err(MutateError::ParseFailure(_))));
        assert!(matches!(extract_referenced_signals("assert(a));"), Err(MutateError::ParseFailure(_))));
    }

    #[test]
    fn var_needs_another_name() {
        let u = unit("module t(output reg y);\nalways @* y = 1;\nendmodule\n");
        assert_eq!(
            apply_mutation(&u, 2, SyntacticKind::Var, 0),
            Err(MutateError::NoAlternative { line: 2, kind: SyntacticKind::Var })
        );
    }

    #[test]
    fn apply_and_revert_touch_one_line() {
        let u = unit(TABLE_DESIGN);
        for seed in 0..50 {
            for site in enumerate_sites(&u) {
                for kind in &site.kinds {
                    let r = apply_mutation(&u, site.line, *kind, seed).unwrap();
                    let mutated = r.apply(&u.text).unwrap();
                    let diff = u.text.split('\n').zip(mutated.split('\n')).filter(|(a, b)| a != b).count();
                    assert_eq!(diff, 1);
                    assert_eq!(r.revert(&mutated).unwrap(), u.text);
                }
            }
        }
    }

    #[test]
    fn insertion_before_endmodule() {
        let a = AssertionSpec::for_source("assert(out == in);", TABLE_DESIGN).unwrap();
        assert_eq!(a.insertion_line, 8);
        let with = a.insert_into(TABLE_DESIGN).unwrap();
        assert_eq!(line_text(&with, 8), Some("assert(out == in);"));
        assert_eq!(line_text(&with, 9), Some("endmodule"));
        assert_eq!(a.map_line(TABLE_DESIGN, 5), 5);

        let inline = "module m; always @* y = a; endmodule";
        let a = AssertionSpec::for_source("assert(y == a);", inline).unwrap();
        let with = a.insert_into(inline).unwrap();
        assert_eq!(line_text(&with, a.insertion_line), Some("assert(y == a);"));
    }

    #[test]
    fn replacement_kind_inference() {
        let u = unit(TABLE_DESIGN);
        let e = MutationEngine::new(&u);
        let k = |line, m: &str| e.record_for_replacement(line, m, 0).unwrap().bug_type.syntactic;
        assert_eq!(k(3, "  y = a & b;"), SyntacticKind::Op);
        assert_eq!(k(5, "  if (!valid) out <= in;"), SyntacticKind::Cond);
        assert_eq!(k(6, "  temp <= b;"), SyntacticKind::Var);
        assert_eq!(k(6, "  temp <= in + 1;"), SyntacticKind::NonCond);
    }

    #[test]
    fn wire_serialization() {
        let u = unit(TABLE_DESIGN);
        let r = apply_mutation(&u, 3, SyntacticKind::Op, 7).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        for key in ["unit_id", "line", "original", "mutated", "syntactic", "relation", "seed"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        let back: MutationRecord = serde_json::from_value(v).unwrap();
        assert_eq!(back, r);
    }
}
