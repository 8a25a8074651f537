// SPDX-License-Identifier: Apache-2.0

//! Function-level changes.
//!
//! A function's lines run from its first decorator through the last line of
//! its body; the `def` line and docstring count. Lines of a nested function
//! belong to the innermost enclosing `def` when measuring how much of a
//! function was modified, while the parent's `code` still contains the
//! nested text.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::ops::AddAssign;

use serde::Serialize;

use super::imports::added_imports;
use super::{CommitMeta, CommitRecord, FileChange, FunctionChange};
use crate::diff::{diff_lines, LineSet};
use crate::pylex::{scan, Token, TokenKind};
use crate::seed::stable_id;
use crate::{Error, Result};

/// Share of modified lines a function must strictly exceed.
pub const DEFAULT_THRESHOLD: f64 = 0.80;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractConfig {
    pub threshold: f64,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig {
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ExtractStats {
    pub commits: usize,
    pub merge_commits_skipped: usize,
    pub python_files: usize,
    pub files_unparseable: usize,
    pub candidates: usize,
    pub below_threshold: usize,
    pub extracted: usize,
}

impl AddAssign for ExtractStats {
    fn add_assign(&mut self, o: Self) {
        self.commits += o.commits;
        self.merge_commits_skipped += o.merge_commits_skipped;
        self.python_files += o.python_files;
        self.files_unparseable += o.files_unparseable;
        self.candidates += o.candidates;
        self.below_threshold += o.below_threshold;
        self.extracted += o.extracted;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    /// None for merge commits.
    pub commit: Option<CommitMeta>,
    pub functions: Vec<FunctionChange>,
    pub stats: ExtractStats,
}

/// A function definition located in a source file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionDef {
    pub qualified_name: String,
    /// First line, including decorators.
    pub start_line: usize,
    pub def_line: usize,
    pub end_line: usize,
    /// Lines attributed to this function rather than to a nested one.
    pub own_lines: Vec<usize>,
}

/// Share of the new function's lines that are added or changed.
///
/// `added_lines` are 1-based line numbers relative to `new_fn_text`. With no
/// old text the function was created by the commit and the share is 1.
pub fn modified_line_fraction(
    old_fn_text: Option<&str>,
    new_fn_text: &str,
    added_lines: &LineSet,
) -> Result<f64> {
    let total = new_fn_text.lines().count();
    if total == 0 {
        return Err(Error::EmptyFunctionBody);
    }
    if old_fn_text.is_none() {
        return Ok(1.0);
    }
    let changed = added_lines.range(1..=total).count();
    Ok(changed as f64 / total as f64)
}

/// Same as [`modified_line_fraction`] but derives the line diff itself.
pub fn modified_line_fraction_between(old_fn_text: Option<&str>, new_fn_text: &str) -> Result<f64> {
    let added = match old_fn_text {
        Some(old) => diff_lines(old, new_fn_text).added,
        None => LineSet::new(),
    };
    modified_line_fraction(old_fn_text, new_fn_text, &added)
}

struct Scope {
    name: String,
    is_def: bool,
    depth: usize,
    start_line: usize,
    def_line: usize,
    end_line: usize,
}

/// Locates every function definition (methods and nested functions
/// included). Fails when the text does not lex and lay out cleanly.
pub fn parse_functions(source: &str) -> Result<Vec<FunctionDef>> {
    let s = scan(source);
    if let Some(issue) = s.issues.first() {
        return Err(Error::invalid(format!("python parse failed: {issue}")));
    }

    // (qualified name, depth, start, def line, end)
    let mut defs: Vec<DefSpan> = Vec::new();
    let mut open: Vec<Scope> = Vec::new();
    let mut depth = 0usize;
    let mut line: Vec<&Token<'_>> = Vec::new();
    let mut decorator_start: Option<(usize, usize)> = None;

    for t in &s.tokens {
        match t.kind {
            TokenKind::Indent => depth += 1,
            TokenKind::Dedent => depth -= 1,
            TokenKind::Comment | TokenKind::Nl => {}
            TokenKind::Newline => {
                if line.is_empty() {
                    continue;
                }
                let first = line[0].line;
                let last = line.last().unwrap().end_line;
                // A header at depth d owns lines deeper than d only.
                close_at(&mut open, &mut defs, depth);
                for sc in open.iter_mut() {
                    sc.end_line = sc.end_line.max(last);
                }

                let is_decorator = line[0].is_op("@");
                if is_decorator {
                    if decorator_start.map_or(true, |(d, _)| d != depth) {
                        decorator_start = Some((depth, first));
                    }
                } else {
                    let header = block_header(&line);
                    if let Some((is_def, name, one_liner)) = header {
                        let start = match decorator_start {
                            Some((d, l)) if d == depth => l,
                            _ => first,
                        };
                        let sc = Scope {
                            name,
                            is_def,
                            depth,
                            start_line: start,
                            def_line: first,
                            end_line: last,
                        };
                        if one_liner {
                            if is_def {
                                let qual = qualified(&open, &sc.name);
                                defs.push((qual, depth, start, first, last));
                            }
                        } else {
                            open.push(sc);
                        }
                    }
                    decorator_start = None;
                }
                line.clear();
            }
            _ => line.push(t),
        }
    }
    close_at(&mut open, &mut defs, 0);

    defs.sort_by_key(|d| (d.2, d.1));
    let ranges: Vec<(usize, usize)> = defs.iter().map(|d| (d.2, d.4)).collect();
    let mut seen: HashMap<String, usize> = HashMap::new();
    let out = defs
        .iter()
        .enumerate()
        .map(|(i, (name, _, start, def_line, end))| {
            let own_lines = (*start..=*end)
                .filter(|&l| {
                    !ranges.iter().enumerate().any(|(j, &(s, e))| {
                        j != i && s >= *start && e <= *end && (s, e) != (*start, *end) && l >= s && l <= e
                    })
                })
                .collect();
            let n = seen.entry(name.clone()).or_insert(0);
            *n += 1;
            let qualified_name = if *n == 1 {
                name.clone()
            } else {
                format!("{name}#{n}")
            };
            FunctionDef {
                qualified_name,
                start_line: *start,
                def_line: *def_line,
                end_line: *end,
                own_lines,
            }
        })
        .collect();
    Ok(out)
}

type DefSpan = (String, usize, usize, usize, usize);

fn close_at(open: &mut Vec<Scope>, defs: &mut Vec<DefSpan>, depth: usize) {
    while open.last().is_some_and(|sc| sc.depth >= depth) {
        let sc = open.pop().unwrap();
        if sc.is_def {
            let qual = qualified(open, &sc.name);
            defs.push((qual, sc.depth, sc.start_line, sc.def_line, sc.end_line));
        }
    }
}

fn qualified(open: &[Scope], name: &str) -> String {
    let mut parts: Vec<&str> = open.iter().map(|s| s.name.as_str()).collect();
    parts.push(name);
    parts.join(".")
}

/// Recognises `def`/`async def`/`class` headers. Returns (is_def, name,
/// body_on_same_line).
fn block_header(line: &[&Token<'_>]) -> Option<(bool, String, bool)> {
    let mut i = 0;
    if line.first()?.is_name("async") {
        i = 1;
    }
    let kw = line.get(i)?;
    let is_def = kw.is_name("def");
    if !is_def && !kw.is_name("class") {
        return None;
    }
    let name = line.get(i + 1).filter(|t| t.kind == TokenKind::Name)?;
    let mut depth = 0usize;
    let mut colon = None;
    for (j, t) in line.iter().enumerate().skip(i + 2) {
        match t.text {
            "(" | "[" | "{" if t.kind == TokenKind::Op => depth += 1,
            ")" | "]" | "}" if t.kind == TokenKind::Op => depth = depth.saturating_sub(1),
            ":" if t.kind == TokenKind::Op && depth == 0 => {
                colon = Some(j);
                break;
            }
            _ => {}
        }
    }
    let colon = colon?;
    Some((is_def, name.text.to_string(), colon + 1 < line.len()))
}

fn dedent_block(lines: &[&str]) -> String {
    let indent: &str = lines
        .first()
        .map(|l| &l[..l.len() - l.trim_start().len()])
        .unwrap_or("");
    let mut out = String::new();
    for l in lines {
        out.push_str(l.strip_prefix(indent).unwrap_or(l));
        out.push('\n');
    }
    out
}

fn module_path(path: &str) -> String {
    path.trim_end_matches(".py").replace(['/', '\\'], ".")
}

/// Reduces one commit to its summary plus its substantially modified
/// functions (modified share strictly above `cfg.threshold`).
pub fn extract_function_changes(commit: &CommitRecord, cfg: &ExtractConfig) -> Extraction {
    let mut stats = ExtractStats {
        commits: 1,
        ..Default::default()
    };
    if commit.is_merge() {
        stats.merge_commits_skipped = 1;
        return Extraction {
            commit: None,
            functions: Vec::new(),
            stats,
        };
    }

    let mut functions = Vec::new();
    let mut commit_imports = BTreeSet::new();
    let mut n_python = 0;
    for file in &commit.files {
        if !file.is_python {
            continue;
        }
        n_python += 1;
        stats.python_files += 1;
        let Some(new_text) = file.new_text.as_deref() else {
            continue;
        };
        let file_imports = added_imports(new_text, &file.added_lines);
        commit_imports.extend(file_imports.iter().cloned());
        match file_functions(commit, file, new_text, &file_imports, cfg, &mut stats) {
            Some(mut fs) => functions.append(&mut fs),
            None => stats.files_unparseable += 1,
        }
    }
    stats.extracted = functions.len();

    Extraction {
        commit: Some(CommitMeta {
            commit_id: commit.commit_id.clone(),
            user_id: commit.user_id.clone(),
            project_id: commit.project_id.clone(),
            timestamp: commit.timestamp,
            country: commit.country.clone(),
            n_files: commit.files.len(),
            n_python_files: n_python,
            imports_added: commit_imports,
        }),
        functions,
        stats,
    }
}

fn file_functions(
    commit: &CommitRecord,
    file: &FileChange,
    new_text: &str,
    imports: &BTreeSet<String>,
    cfg: &ExtractConfig,
    stats: &mut ExtractStats,
) -> Option<Vec<FunctionChange>> {
    let defs = parse_functions(new_text).ok()?;
    let old_names: Option<HashSet<String>> = match file.old_text.as_deref() {
        None => Some(HashSet::new()),
        Some(old) => parse_functions(old)
            .ok()
            .map(|ds| ds.into_iter().map(|d| d.qualified_name).collect()),
    };
    let lines: Vec<&str> = new_text.lines().collect();
    let module = module_path(&file.path);

    let mut out = Vec::new();
    for def in defs {
        stats.candidates += 1;
        let is_new = old_names
            .as_ref()
            .is_some_and(|names| !names.contains(&def.qualified_name));
        let fraction = if is_new {
            1.0
        } else {
            let changed = def
                .own_lines
                .iter()
                .filter(|l| file.added_lines.contains(l))
                .count();
            changed as f64 / def.own_lines.len().max(1) as f64
        };
        if fraction <= cfg.threshold {
            stats.below_threshold += 1;
            continue;
        }
        let function_id = stable_id(&[&commit.project_id, &module, &def.qualified_name]);
        let change_id = stable_id(&[&commit.commit_id, &function_id]);
        out.push(FunctionChange {
            function_id,
            change_id,
            commit_id: commit.commit_id.clone(),
            user_id: commit.user_id.clone(),
            project_id: commit.project_id.clone(),
            path: file.path.clone(),
            qualified_name: def.qualified_name.clone(),
            timestamp: commit.timestamp,
            country: commit.country.clone(),
            code: dedent_block(&lines[def.start_line - 1..def.end_line]),
            modified_fraction: fraction,
            imports_added: imports.clone(),
            is_new_function: is_new,
        });
    }
    Some(out)
}
