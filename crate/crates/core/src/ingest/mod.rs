// SPDX-License-Identifier: Apache-2.0

//! From commit histories to function-level changes.
//!
//! Commit histories arrive either as `cd1` dump files (see [`dump`]) or as
//! local git checkouts (see [`git`]). Each commit is reduced to a
//! [`CommitMeta`] summary plus one [`FunctionChange`] per Python function
//! whose lines were modified in *more than* 80% by that commit.

use std::collections::BTreeSet;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::diff::{diff_lines, LineSet};

pub mod dump;
pub mod functions;
pub mod git;
pub mod imports;

pub use dump::{load_commit_dump, write_commit_dump, DumpReader, LoadedDump, SCHEMA_VERSION};
pub use functions::{
    extract_function_changes, modified_line_fraction, parse_functions, ExtractConfig,
    ExtractStats, Extraction, FunctionDef,
};
pub use imports::{added_imports, extract_imports, ImportScan};

#[derive(Debug, Clone, PartialEq)]
pub struct CommitRecord {
    pub commit_id: String,
    pub user_id: String,
    pub project_id: String,
    pub timestamp: DateTime<Utc>,
    /// ISO-3166 alpha-2.
    pub country: Option<String>,
    /// Parent commit ids when known; commits with more than one parent are
    /// merges and yield no function changes.
    pub parents: Vec<String>,
    pub files: Vec<FileChange>,
}

impl CommitRecord {
    pub fn is_merge(&self) -> bool {
        self.parents.len() > 1
    }
}

/// One file touched by a commit. Python files carry text; other files may
/// carry none and only count toward the number of touched files.
#[derive(Debug, Clone, PartialEq)]
pub struct FileChange {
    pub path: String,
    pub is_python: bool,
    pub old_text: Option<String>,
    pub new_text: Option<String>,
    /// Lines of `new_text` inserted or changed by the commit.
    pub added_lines: LineSet,
    /// Lines of `old_text` removed or changed by the commit.
    pub deleted_lines: LineSet,
}

impl FileChange {
    pub fn new(path: impl Into<String>, old_text: Option<String>, new_text: Option<String>) -> Self {
        let path = path.into();
        let is_python = path.ends_with(".py");
        let (added_lines, deleted_lines) = match (&old_text, &new_text) {
            (Some(o), Some(n)) => {
                let d = diff_lines(o, n);
                (d.added, d.deleted)
            }
            (None, Some(n)) => ((1..=n.lines().count()).collect(), LineSet::new()),
            (Some(o), None) => (LineSet::new(), (1..=o.lines().count()).collect()),
            (None, None) => (LineSet::new(), LineSet::new()),
        };
        FileChange {
            path,
            is_python,
            old_text,
            new_text,
            added_lines,
            deleted_lines,
        }
    }
}

/// One substantially modified function in one commit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionChange {
    /// Stable across commits: hash of (project, module path, qualified name).
    pub function_id: String,
    /// Unique per (commit, function); the key used for scoring.
    pub change_id: String,
    pub commit_id: String,
    pub user_id: String,
    pub project_id: String,
    pub path: String,
    pub qualified_name: String,
    pub timestamp: DateTime<Utc>,
    #[serde(default)]
    pub country: Option<String>,
    /// Function text after the commit, dedented to column zero.
    pub code: String,
    pub modified_fraction: f64,
    /// Libraries whose import statements the commit added to this file.
    pub imports_added: BTreeSet<String>,
    pub is_new_function: bool,
}

/// Commit-level summary needed by the panel outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommitMeta {
    pub commit_id: String,
    pub user_id: String,
    pub project_id: String,
    pub timestamp: DateTime<Utc>,
    #[serde(default)]
    pub country: Option<String>,
    pub n_files: usize,
    pub n_python_files: usize,
    /// Top-level libraries of import statements added anywhere in the commit.
    pub imports_added: BTreeSet<String>,
}

/// A line of `functions.ndjson`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MinedRecord {
    Commit(CommitMeta),
    Function(FunctionChange),
}

/// Ordering used when merging shards: (timestamp, commit_id).
pub fn sort_commits(commits: &mut [CommitRecord]) {
    commits.sort_by(|a, b| {
        a.timestamp
            .cmp(&b.timestamp)
            .then_with(|| a.commit_id.cmp(&b.commit_id))
    });
}
