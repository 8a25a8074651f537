// SPDX-License-Identifier: Apache-2.0

//! Mining local git checkouts through the `git` command-line tool.
//!
//! History is walked along first parents only and merge commits are left
//! out. Author e-mails are hashed into anonymous user ids; the project id is
//! the checkout's directory name.

use std::path::Path;
use std::process::Command;

use chrono::{DateTime, Utc};

use super::{CommitRecord, FileChange};
use crate::seed::stable_id;
use crate::{Error, Result};

const RECORD_SEP: char = '\u{1e}';
const FIELD_SEP: char = '\u{1f}';

fn git(repo: &Path, args: &[&str]) -> Result<Option<String>> {
    let out = Command::new("git")
        .arg("-C")
        .arg(repo)
        .args(args)
        .output()
        .map_err(|e| Error::io(repo, e))?;
    if !out.status.success() {
        return Ok(None);
    }
    Ok(Some(String::from_utf8_lossy(&out.stdout).into_owned()))
}

fn show(repo: &Path, rev: &str, path: &str) -> Result<Option<String>> {
    git(repo, &["show", &format!("{rev}:{path}")])
}

/// Reads the first-parent history of the checkout at `repo`, oldest first.
pub fn read_repository(repo: &Path) -> Result<Vec<CommitRecord>> {
    let project_id = repo
        .canonicalize()
        .map_err(|e| Error::io(repo, e))?
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "repo".into());
    let format = format!("--format={RECORD_SEP}%H{FIELD_SEP}%P{FIELD_SEP}%ae{FIELD_SEP}%aI");
    let log = git(
        repo,
        &["log", "--reverse", "--first-parent", "--no-merges", "--name-only", &format],
    )?
    .ok_or_else(|| Error::invalid(format!("`git log` failed in {}", repo.display())))?;

    let mut commits = Vec::new();
    for chunk in log.split(RECORD_SEP).filter(|c| !c.trim().is_empty()) {
        let mut lines = chunk.lines();
        let header = lines.next().unwrap_or_default();
        let fields: Vec<&str> = header.split(FIELD_SEP).collect();
        if fields.len() != 4 {
            return Err(Error::invalid(format!("unexpected git log header `{header}`")));
        }
        let (hash, parents, email, date) = (fields[0], fields[1], fields[2], fields[3]);
        let timestamp: DateTime<Utc> = DateTime::parse_from_rfc3339(date)
            .map_err(|e| Error::invalid(format!("bad commit date `{date}`: {e}")))?
            .with_timezone(&Utc);
        let parents: Vec<String> = parents.split_whitespace().map(String::from).collect();
        let mut files = Vec::new();
        for path in lines.map(str::trim).filter(|l| !l.is_empty()) {
            if path.ends_with(".py") {
                let old = match parents.first() {
                    Some(p) => show(repo, p, path)?,
                    None => None,
                };
                let new = show(repo, hash, path)?;
                files.push(FileChange::new(path, old, new));
            } else {
                files.push(FileChange::new(path, None, None));
            }
        }
        commits.push(CommitRecord {
            commit_id: hash.to_string(),
            user_id: stable_id(&[&email.to_lowercase()]),
            project_id: project_id.clone(),
            timestamp,
            country: None,
            parents,
            files,
        });
    }
    Ok(commits)
}
