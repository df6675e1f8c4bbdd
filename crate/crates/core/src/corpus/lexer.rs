//! Token-level Verilog/SystemVerilog lexer.
//!
//! The lexer never fails: every byte of the input ends up in exactly one
//! token, so concatenating the lexemes reproduces the source. Characters it
//! does not understand become [`TokenKind::Other`].

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenKind {
    Keyword,
    Identifier,
    Number,
    Operator,
    Punctuation,
    String,
    Comment,
    Whitespace,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub kind: TokenKind,
    pub text: String,
    /// 1-based line of the first character.
    pub line: usize,
    /// 1-based column (in characters) of the first character.
    pub col: usize,
}

impl Token {
    pub fn is_trivia(&self) -> bool {
        matches!(self.kind, TokenKind::Whitespace | TokenKind::Comment)
    }

    pub fn is_keyword(&self, kw: &str) -> bool {
        self.kind == TokenKind::Keyword && self.text == kw
    }

    pub fn is_punct(&self, p: &str) -> bool {
        self.kind == TokenKind::Punctuation && self.text == p
    }

    pub fn is_op(&self, op: &str) -> bool {
        self.kind == TokenKind::Operator && self.text == op
    }
}

/// IEEE 1364-2005 reserved words.
pub const VERILOG_2005_KEYWORDS: &[&str] = &[
    "always",
    "and",
    "assign",
    "automatic",
    "begin",
    "buf",
    "bufif0",
    "bufif1",
    "case",
    "casex",
    "casez",
    "cell",
    "cmos",
    "config",
    "deassign",
    "default",
    "defparam",
    "design",
    "disable",
    "edge",
    "else",
    "end",
    "endcase",
    "endconfig",
    "endfunction",
    "endgenerate",
    "endmodule",
    "endprimitive",
    "endspecify",
    "endtable",
    "endtask",
    "event",
    "for",
    "force",
    "forever",
    "fork",
    "function",
    "generate",
    "genvar",
    "highz0",
    "highz1",
    "if",
    "ifnone",
    "incdir",
    "include",
    "initial",
    "inout",
    "input",
    "instance",
    "integer",
    "join",
    "large",
    "liblist",
    "library",
    "localparam",
    "macromodule",
    "medium",
    "module",
    "nand",
    "negedge",
    "nmos",
    "nor",
    "noshowcancelled",
    "not",
    "notif0",
    "notif1",
    "or",
    "output",
    "parameter",
    "pmos",
    "posedge",
    "primitive",
    "pull0",
    "pull1",
    "pulldown",
    "pullup",
    "pulsestyle_ondetect",
    "pulsestyle_onevent",
    "rcmos",
    "real",
    "realtime",
    "reg",
    "release",
    "repeat",
    "rnmos",
    "rpmos",
    "rtran",
    "rtranif0",
    "rtranif1",
    "scalared",
    "showcancelled",
    "signed",
    "small",
    "specify",
    "specparam",
    "strong0",
    "strong1",
    "supply0",
    "supply1",
    "table",
    "task",
    "time",
    "tran",
    "tranif0",
    "tranif1",
    "tri",
    "tri0",
    "tri1",
    "triand",
    "trior",
    "trireg",
    "unsigned",
    "use",
    "uwire",
    "vectored",
    "wait",
    "wand",
    "weak0",
    "weak1",
    "while",
    "wire",
    "wor",
    "xnor",
    "xor",
];

/// SystemVerilog words that matter to the pipeline (procedural blocks,
/// assertion syntax, common data types).
pub const SYSTEMVERILOG_KEYWORDS: &[&str] = &[
    "always_comb",
    "always_ff",
    "always_latch",
    "assert",
    "assume",
    "cover",
    "property",
    "endproperty",
    "sequence",
    "endsequence",
    "logic",
    "bit",
    "byte",
    "int",
    "shortint",
    "longint",
    "iff",
    "unique",
    "priority",
    "typedef",
    "enum",
    "struct",
    "packed",
    "restrict",
    "expect",
    "throughout",
    "within",
    "intersect",
    "first_match",
    "until",
    "s_until",
    "until_with",
    "s_until_with",
    "implies",
    "nexttime",
    "s_nexttime",
    "eventually",
    "s_eventually",
    "accept_on",
    "reject_on",
    "sync_accept_on",
    "sync_reject_on",
    "strong",
    "weak",
    "final",
    "clocking",
    "endclocking",
];

pub fn is_keyword(word: &str) -> bool {
    VERILOG_2005_KEYWORDS.contains(&word) || SYSTEMVERILOG_KEYWORDS.contains(&word)
}

// Longest first within each length class.
const OPERATORS: &[&str] = &[
    "<<<=", ">>>=", "===", "!==", "<<<", ">>>", "|->", "|=>", "<<=", ">>=", "==?", "!=?", "==", "!=", "<=", ">=", "&&",
    "||", "<<", ">>", "**", "~&", "~|", "~^", "^~", "->", "+:", "-:", "++", "--", "+=", "-=", "*=", "/=", "%=", "&=",
    "|=", "^=", "##", "::", "+", "-", "*", "/", "%", "&", "|", "^", "~", "!", "<", ">", "=", "?", ":",
];

const PUNCTUATION: &[char] = &['(', ')', '[', ']', '{', '}', ';', ',', '.', '@', '#'];

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
    line: usize,
    col: usize,
}

impl<'a> Cursor<'a> {
    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn peek_nth(&self, n: usize) -> Option<char> {
        self.rest().chars().nth(n)
    }

    /// Consume `len` bytes and return the token they form.
    fn take(&mut self, len: usize, kind: TokenKind) -> Token {
        let text = &self.src[self.pos..self.pos + len];
        let tok = Token { kind, text: text.to_string(), line: self.line, col: self.col };
        for ch in text.chars() {
            if ch == '\n' {
                self.line += 1;
                self.col = 1;
            } else {
                self.col += 1;
            }
        }
        self.pos += len;
        tok
    }
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident_continue(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '$'
}

fn byte_len_while(s: &str, mut pred: impl FnMut(char) -> bool) -> usize {
    s.char_indices().find(|&(_, c)| !pred(c)).map(|(i, _)| i).unwrap_or(s.len())
}

/// Length of a based literal tail starting at `'`, e.g. `'b1010`, `'shFF`, `'0`.
fn based_tail_len(s: &str) -> Option<usize> {
    let bytes = s.as_bytes();
    if bytes.first() != Some(&b'\'') {
        return None;
    }
    let mut i = 1;
    if matches!(bytes.get(i), Some(b's') | Some(b'S')) {
        i += 1;
    }
    match bytes.get(i) {
        Some(b'b' | b'B' | b'o' | b'O' | b'd' | b'D' | b'h' | b'H') => {
            i += 1;
            let digits = byte_len_while(&s[i..], |c| c.is_ascii_hexdigit() || "xXzZ?_".contains(c));
            if digits == 0 {
                return None;
            }
            Some(i + digits)
        }
        // SystemVerilog unbased unsized literals.
        Some(b'0' | b'1' | b'x' | b'X' | b'z' | b'Z') if i == 1 => {
            let next = s[2..].chars().next();
            if next.is_some_and(is_ident_continue) {
                None
            } else {
                Some(2)
            }
        }
        _ => None,
    }
}

fn number_len(s: &str) -> usize {
    let mut len = byte_len_while(s, |c| c.is_ascii_digit() || c == '_');
    if let Some(tail) = based_tail_len(&s[len..]) {
        return len + tail;
    }
    let rest = &s[len..];
    if rest.starts_with('.') && rest[1..].starts_with(|c: char| c.is_ascii_digit()) {
        len += 1 + byte_len_while(&rest[1..], |c| c.is_ascii_digit() || c == '_');
    }
    let rest = &s[len..];
    if rest.starts_with(['e', 'E']) {
        let mut j = 1;
        if rest[1..].starts_with(['+', '-']) {
            j += 1;
        }
        let digits = byte_len_while(&rest[j..], |c| c.is_ascii_digit());
        if digits > 0 {
            len += j + digits;
        }
    }
    len
}

fn string_len(s: &str) -> usize {
    let mut escaped = false;
    for (i, c) in s.char_indices().skip(1) {
        match c {
            '\\' if !escaped => escaped = true,
            '"' if !escaped => return i + 1,
            '\n' => return i,
            _ => escaped = false,
        }
    }
    s.len()
}

/// Split `text` into tokens. Concatenating the `text` of every returned token
/// yields the input exactly.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut cur = Cursor { src: text, pos: 0, line: 1, col: 1 };
    let mut out = Vec::new();
    while let Some(c) = cur.peek() {
        let rest = cur.rest();
        let tok = if c.is_whitespace() {
            let len = byte_len_while(rest, char::is_whitespace);
            cur.take(len, TokenKind::Whitespace)
        } else if rest.starts_with("//") {
            let len = rest.find('\n').unwrap_or(rest.len());
            cur.take(len, TokenKind::Comment)
        } else if let Some(body) = rest.strip_prefix("/*") {
            let len = body.find("*/").map(|i| i + 4).unwrap_or(rest.len());
            cur.take(len, TokenKind::Comment)
        } else if c == '"' {
            let len = string_len(rest);
            cur.take(len, TokenKind::String)
        } else if is_ident_start(c) {
            let len = byte_len_while(rest, is_ident_continue);
            let kind = if is_keyword(&rest[..len]) { TokenKind::Keyword } else { TokenKind::Identifier };
            cur.take(len, kind)
        } else if c == '$' && cur.peek_nth(1).is_some_and(is_ident_start) {
            // System task or function.
            let len = 1 + byte_len_while(&rest[1..], is_ident_continue);
            cur.take(len, TokenKind::Identifier)
        } else if c == '\\' && cur.peek_nth(1).is_some_and(|n| !n.is_whitespace()) {
            // Escaped identifier runs to the next whitespace.
            let len = byte_len_while(rest, |ch| !ch.is_whitespace());
            cur.take(len, TokenKind::Identifier)
        } else if c.is_ascii_digit() {
            let len = number_len(rest);
            cur.take(len, TokenKind::Number)
        } else if c == '\'' {
            match based_tail_len(rest) {
                Some(len) => cur.take(len, TokenKind::Number),
                None => cur.take(1, TokenKind::Other),
            }
        } else if c == '`' {
            let len = 1 + byte_len_while(&rest[1..], is_ident_continue);
            cur.take(len, TokenKind::Other)
        } else if let Some(op) = OPERATORS.iter().find(|op| rest.starts_with(**op)) {
            cur.take(op.len(), TokenKind::Operator)
        } else if PUNCTUATION.contains(&c) {
            cur.take(1, TokenKind::Punctuation)
        } else {
            cur.take(c.len_utf8(), TokenKind::Other)
        };
        out.push(tok);
    }
    out
}
