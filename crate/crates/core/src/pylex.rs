// SPDX-License-Identifier: Apache-2.0

//! A small Python lexer.
//!
//! Produces the same token categories as CPython's `tokenize` module
//! (names, numbers, strings, operators, comments plus the layout tokens
//! NEWLINE, NL, INDENT and DEDENT). The scanner never gives up: problems are
//! recorded as [`Issue`]s and scanning continues, so callers can decide how
//! strict to be. Token-level problems (unterminated strings, stray
//! characters) make text *unlexable*; layout problems (inconsistent dedent,
//! unbalanced brackets) make it lexable but *unparseable*.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenKind {
    Name,
    Number,
    String,
    Op,
    Comment,
    /// End of a logical line.
    Newline,
    /// Non-logical line break (blank line, comment line, inside brackets).
    Nl,
    Indent,
    Dedent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Token<'a> {
    pub kind: TokenKind,
    pub text: &'a str,
    /// 1-based line of the first character.
    pub line: usize,
    /// 1-based line of the last character.
    pub end_line: usize,
}

impl Token<'_> {
    /// Tokens that carry source text, as opposed to layout markers.
    pub fn is_lexical(&self) -> bool {
        !matches!(
            self.kind,
            TokenKind::Newline | TokenKind::Nl | TokenKind::Indent | TokenKind::Dedent
        )
    }

    pub fn is_op(&self, op: &str) -> bool {
        self.kind == TokenKind::Op && self.text == op
    }

    pub fn is_name(&self, name: &str) -> bool {
        self.kind == TokenKind::Name && self.text == name
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IssueKind {
    /// The text cannot be split into tokens.
    Lexical,
    /// Tokens are fine but the block layout is broken.
    Layout,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Issue {
    pub kind: IssueKind,
    pub line: usize,
    pub message: &'static str,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Clone)]
pub struct Scan<'a> {
    pub tokens: Vec<Token<'a>>,
    pub issues: Vec<Issue>,
}

impl Scan<'_> {
    pub fn lexes(&self) -> bool {
        self.issues.iter().all(|i| i.kind != IssueKind::Lexical)
    }

    pub fn parses(&self) -> bool {
        self.issues.is_empty()
    }
}

const OPS3: [&str; 5] = ["**=", "//=", ">>=", "<<=", "..."];
const OPS2: [&str; 19] = [
    "**", "//", "==", "!=", "<=", ">=", "<<", ">>", "+=", "-=", "*=", "/=", "%=", "&=", "|=",
    "^=", "->", ":=", "@=",
];
const OPS1: &str = "+-*/%@&|^~<>()[]{},:;.=!";

pub fn scan(src: &str) -> Scan<'_> {
    Scanner::new(src).run()
}

struct Scanner<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
    line: usize,
    depth: usize,
    indents: Vec<usize>,
    tokens: Vec<Token<'a>>,
    issues: Vec<Issue>,
    line_has_code: bool,
}

impl<'a> Scanner<'a> {
    fn new(src: &'a str) -> Self {
        Scanner {
            src,
            bytes: src.as_bytes(),
            pos: 0,
            line: 1,
            depth: 0,
            indents: vec![0],
            tokens: Vec::new(),
            issues: Vec::new(),
            line_has_code: false,
        }
    }

    fn push(&mut self, kind: TokenKind, start: usize, end: usize, line: usize) {
        self.tokens.push(Token {
            kind,
            text: &self.src[start..end],
            line,
            end_line: self.line,
        });
    }

    fn issue(&mut self, kind: IssueKind, message: &'static str) {
        self.issues.push(Issue {
            kind,
            line: self.line,
            message,
        });
    }

    fn peek(&self, off: usize) -> Option<u8> {
        self.bytes.get(self.pos + off).copied()
    }

    fn run(mut self) -> Scan<'a> {
        let mut at_line_start = true;
        while self.pos < self.bytes.len() {
            if at_line_start {
                at_line_start = false;
                if self.depth == 0 && self.layout_line() {
                    continue;
                }
            }
            let c = self.bytes[self.pos];
            match c {
                b' ' | b'\t' | b'\x0c' | b'\r' => self.pos += 1,
                b'\n' => {
                    let start = self.pos;
                    self.pos += 1;
                    let kind = if self.depth == 0 && self.line_has_code {
                        self.line_has_code = false;
                        TokenKind::Newline
                    } else {
                        TokenKind::Nl
                    };
                    self.push(kind, start, self.pos, self.line);
                    self.line += 1;
                    at_line_start = true;
                }
                b'#' => self.comment(),
                b'\\' => {
                    let next = self.peek(1);
                    let crlf = next == Some(b'\r') && self.peek(2) == Some(b'\n');
                    if next == Some(b'\n') || crlf {
                        self.pos += if crlf { 3 } else { 2 };
                        self.line += 1;
                    } else {
                        self.issue(IssueKind::Lexical, "stray backslash");
                        self.single_op(1);
                    }
                }
                b'"' | b'\'' => self.string(self.pos),
                b'0'..=b'9' => self.number(),
                b'.' if matches!(self.peek(1), Some(b'0'..=b'9')) => self.number(),
                _ if is_ident_start(self.char_at(self.pos)) => {
                    if let Some(qlen) = self.string_prefix_len() {
                        let start = self.pos;
                        self.pos += qlen;
                        self.string(start);
                    } else {
                        self.name();
                    }
                }
                _ => self.operator(),
            }
        }
        if self.line_has_code {
            self.push(TokenKind::Newline, self.pos, self.pos, self.line);
        }
        if self.depth > 0 {
            self.issue(IssueKind::Layout, "unclosed bracket at end of input");
        }
        while self.indents.len() > 1 {
            self.indents.pop();
            self.push(TokenKind::Dedent, self.pos, self.pos, self.line);
        }
        Scan {
            tokens: self.tokens,
            issues: self.issues,
        }
    }

    /// Measures indentation at the start of a physical line and emits
    /// INDENT/DEDENT. Returns true when the whole line was consumed (blank or
    /// comment-only line).
    fn layout_line(&mut self) -> bool {
        let mut col = 0usize;
        let mut p = self.pos;
        while let Some(&b) = self.bytes.get(p) {
            match b {
                b' ' => col += 1,
                b'\t' => col = (col / 8 + 1) * 8,
                b'\x0c' => col = 0,
                _ => break,
            }
            p += 1;
        }
        self.pos = p;
        match self.bytes.get(p) {
            None => return true,
            Some(b'\n') | Some(b'\r') | Some(b'#') => return false,
            _ => {}
        }
        let top = *self.indents.last().unwrap();
        if col > top {
            self.indents.push(col);
            self.push(TokenKind::Indent, p, p, self.line);
        } else if col < top {
            while *self.indents.last().unwrap() > col {
                self.indents.pop();
                self.push(TokenKind::Dedent, p, p, self.line);
            }
            if *self.indents.last().unwrap() != col {
                self.issue(IssueKind::Layout, "unindent does not match any outer level");
                self.indents.push(col);
            }
        }
        false
    }

    fn char_at(&self, pos: usize) -> char {
        self.src[pos..].chars().next().unwrap_or('\0')
    }

    fn comment(&mut self) {
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
            self.pos += 1;
        }
        let mut end = self.pos;
        if end > start && self.bytes[end - 1] == b'\r' {
            end -= 1;
        }
        self.push(TokenKind::Comment, start, end, self.line);
    }

    fn name(&mut self) {
        let start = self.pos;
        while self.pos < self.bytes.len() {
            let c = self.char_at(self.pos);
            if is_ident_continue(c) {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
        self.line_has_code = true;
        self.push(TokenKind::Name, start, self.pos, self.line);
    }

    fn string_prefix_len(&self) -> Option<usize> {
        let mut n = 0;
        while n < 3 {
            match self.peek(n) {
                Some(b'r' | b'R' | b'b' | b'B' | b'u' | b'U' | b'f' | b'F') => n += 1,
                Some(b'"' | b'\'') if n > 0 => return Some(n),
                _ => return None,
            }
        }
        None
    }

    fn string(&mut self, start: usize) {
        let line = self.line;
        let quote = self.bytes[self.pos];
        let triple = self.peek(1) == Some(quote) && self.peek(2) == Some(quote);
        self.pos += if triple { 3 } else { 1 };
        self.line_has_code = true;
        loop {
            let Some(&b) = self.bytes.get(self.pos) else {
                self.issue(IssueKind::Lexical, "unterminated string literal");
                break;
            };
            match b {
                b'\\' => {
                    if self.peek(1) == Some(b'\n') {
                        self.line += 1;
                    }
                    self.pos += 2.min(self.bytes.len() - self.pos);
                }
                b'\n' if !triple => {
                    self.issue(IssueKind::Lexical, "unterminated string literal");
                    break;
                }
                b'\n' => {
                    self.line += 1;
                    self.pos += 1;
                }
                _ if b == quote => {
                    if !triple {
                        self.pos += 1;
                        break;
                    }
                    if self.peek(1) == Some(quote) && self.peek(2) == Some(quote) {
                        self.pos += 3;
                        break;
                    }
                    self.pos += 1;
                }
                _ => self.pos += 1,
            }
        }
        self.push(TokenKind::String, start, self.pos, line);
    }

    fn number(&mut self) {
        let start = self.pos;
        let mut prev = 0u8;
        while let Some(&b) = self.bytes.get(self.pos) {
            let exp_sign = (b == b'+' || b == b'-')
                && (prev == b'e' || prev == b'E')
                && !self.src[start..self.pos].starts_with("0x")
                && !self.src[start..self.pos].starts_with("0X");
            if b.is_ascii_alphanumeric() || b == b'_' || b == b'.' || exp_sign {
                prev = b;
                self.pos += 1;
            } else {
                break;
            }
        }
        self.line_has_code = true;
        self.push(TokenKind::Number, start, self.pos, self.line);
    }

    fn single_op(&mut self, len: usize) {
        let start = self.pos;
        self.pos += len;
        self.line_has_code = true;
        self.push(TokenKind::Op, start, self.pos, self.line);
    }

    fn operator(&mut self) {
        let rest = &self.src[self.pos..];
        if let Some(op) = OPS3.iter().find(|op| rest.starts_with(**op)) {
            return self.single_op(op.len());
        }
        if let Some(op) = OPS2.iter().find(|op| rest.starts_with(**op)) {
            return self.single_op(op.len());
        }
        let c = self.char_at(self.pos);
        if OPS1.contains(c) {
            match c {
                '(' | '[' | '{' => self.depth += 1,
                ')' | ']' | '}' => {
                    if self.depth == 0 {
                        self.issue(IssueKind::Layout, "unmatched closing bracket");
                    } else {
                        self.depth -= 1;
                    }
                }
                _ => {}
            }
        } else {
            self.issue(IssueKind::Lexical, "invalid character");
        }
        self.single_op(c.len_utf8());
    }
}

fn is_ident_start(c: char) -> bool {
    c == '_' || c.is_alphabetic()
}

fn is_ident_continue(c: char) -> bool {
    c == '_' || c.is_alphanumeric()
}

/// Content of a string literal without prefix and quotes.
pub fn string_body(lit: &str) -> &str {
    let s = lit.trim_start_matches(|c: char| c.is_ascii_alphabetic());
    for q in ["\"\"\"", "'''", "\"", "'"] {
        if let Some(inner) = s.strip_prefix(q) {
            return inner.strip_suffix(q).unwrap_or(inner);
        }
    }
    s
}
