// SPDX-License-Identifier: Apache-2.0

//! Import statements, recognised from tokens alone.

use std::collections::BTreeSet;

use crate::diff::LineSet;
use crate::pylex::{scan, Token, TokenKind};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ImportScan {
    pub libraries: BTreeSet<String>,
    /// False when the text could not be tokenized; `libraries` is then empty.
    pub lexable: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct ImportStmt {
    pub libraries: Vec<String>,
    pub first_line: usize,
    pub last_line: usize,
}

/// Top-level library names imported by `source`. Relative imports and
/// `__future__` directives are not libraries.
pub fn extract_imports(source: &str) -> ImportScan {
    let s = scan(source);
    if !s.lexes() {
        return ImportScan::default();
    }
    ImportScan {
        libraries: statements(&s.tokens)
            .into_iter()
            .flat_map(|st| st.libraries)
            .collect(),
        lexable: true,
    }
}

/// Libraries of import statements that touch at least one added line.
pub fn added_imports(new_text: &str, added_lines: &LineSet) -> BTreeSet<String> {
    let s = scan(new_text);
    if !s.lexes() {
        return BTreeSet::new();
    }
    statements(&s.tokens)
        .into_iter()
        .filter(|st| added_lines.range(st.first_line..=st.last_line).next().is_some())
        .flat_map(|st| st.libraries)
        .collect()
}

pub(crate) fn statements(tokens: &[Token<'_>]) -> Vec<ImportStmt> {
    let mut out = Vec::new();
    let mut stmt: Vec<&Token<'_>> = Vec::new();
    let flush = |stmt: &mut Vec<&Token<'_>>, out: &mut Vec<ImportStmt>| {
        if let Some(st) = parse_statement(stmt) {
            out.push(st);
        }
        stmt.clear();
    };
    for t in tokens {
        match t.kind {
            TokenKind::Newline => flush(&mut stmt, &mut out),
            TokenKind::Op if t.text == ";" => flush(&mut stmt, &mut out),
            TokenKind::Comment | TokenKind::Nl | TokenKind::Indent | TokenKind::Dedent => {}
            _ => stmt.push(t),
        }
    }
    flush(&mut stmt, &mut out);
    out
}

fn parse_statement(toks: &[&Token<'_>]) -> Option<ImportStmt> {
    let first = toks.first()?;
    let last = toks.last()?;
    let libraries = if first.is_name("import") {
        // import a.b as c, d
        let mut libs = Vec::new();
        let mut expect_module = true;
        let mut depth = 0usize;
        for t in &toks[1..] {
            match (t.kind, t.text) {
                (TokenKind::Op, "(") => depth += 1,
                (TokenKind::Op, ")") => depth = depth.saturating_sub(1),
                (TokenKind::Op, ",") if depth == 0 => expect_module = true,
                (TokenKind::Name, name) if expect_module => {
                    libs.push(name.to_string());
                    expect_module = false;
                }
                _ => {}
            }
        }
        libs
    } else if first.is_name("from") {
        match toks.get(1) {
            Some(t) if t.kind == TokenKind::Name && t.text != "import" => vec![t.text.to_string()],
            _ => Vec::new(),
        }
    } else {
        return None;
    };
    Some(ImportStmt {
        libraries: libraries.into_iter().filter(|l| l != "__future__").collect(),
        first_line: first.line,
        last_line: last.end_line,
    })
}
