// SPDX-License-Identifier: Apache-2.0

//! The `cd1` commit-dump format.
//!
//! Newline-delimited JSON. The first non-empty line is the header
//! `{"schema":"cd1"}`; every following line is one commit:
//!
//! ```text
//! {"commit_id":"..","user_id":"..","project_id":"..","ts":"2023-05-01T12:00:00Z",
//!  "country":"US","files":[{"path":"pkg/a.py","old":"..","new":".."}]}
//! ```
//!
//! `country`, `old` and `new` may be null. An optional `parents` array marks
//! merge commits.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{CommitRecord, FileChange};
use crate::{Error, Result};

pub const SCHEMA_VERSION: &str = "cd1";

#[derive(Serialize, Deserialize)]
struct Header {
    schema: String,
}

#[derive(Serialize, Deserialize)]
struct WireCommit {
    commit_id: String,
    user_id: String,
    project_id: String,
    ts: DateTime<Utc>,
    country: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    parents: Vec<String>,
    files: Vec<WireFile>,
}

#[derive(Serialize, Deserialize)]
struct WireFile {
    path: String,
    old: Option<String>,
    new: Option<String>,
}

impl From<WireCommit> for CommitRecord {
    fn from(w: WireCommit) -> Self {
        CommitRecord {
            commit_id: w.commit_id,
            user_id: w.user_id,
            project_id: w.project_id,
            timestamp: w.ts,
            country: w.country,
            parents: w.parents,
            files: w
                .files
                .into_iter()
                .map(|f| FileChange::new(f.path, f.old, f.new))
                .collect(),
        }
    }
}

impl From<&CommitRecord> for WireCommit {
    fn from(c: &CommitRecord) -> Self {
        WireCommit {
            commit_id: c.commit_id.clone(),
            user_id: c.user_id.clone(),
            project_id: c.project_id.clone(),
            ts: c.timestamp,
            country: c.country.clone(),
            parents: c.parents.clone(),
            files: c
                .files
                .iter()
                .map(|f| WireFile {
                    path: f.path.clone(),
                    old: f.old_text.clone(),
                    new: f.new_text.clone(),
                })
                .collect(),
        }
    }
}

/// Streaming reader over a dump. Malformed commit lines are skipped and
/// counted; I/O failures end the stream with an error.
pub struct DumpReader<R> {
    lines: std::io::Lines<R>,
    path: PathBuf,
    skipped: usize,
    failed: bool,
}

impl DumpReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        DumpReader::new(BufReader::new(file), path)
    }
}

impl<R: BufRead> DumpReader<R> {
    /// Reads and checks the header. An input with no non-empty lines is an
    /// empty dump.
    pub fn new(reader: R, path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let mut lines = reader.lines();
        for line in lines.by_ref() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let header: Header = serde_json::from_str(&line).map_err(|_| Error::MissingHeader)?;
            if header.schema != SCHEMA_VERSION {
                return Err(Error::SchemaVersion {
                    expected: SCHEMA_VERSION.into(),
                    found: header.schema,
                });
            }
            break;
        }
        Ok(DumpReader {
            lines,
            path,
            skipped: 0,
            failed: false,
        })
    }

    pub fn skipped(&self) -> usize {
        self.skipped
    }
}

impl<R: BufRead> Iterator for DumpReader<R> {
    type Item = Result<CommitRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        for line in self.lines.by_ref() {
            let line = match line {
                Ok(l) => l,
                Err(e) => {
                    self.failed = true;
                    return Some(Err(Error::io(&self.path, e)));
                }
            };
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<WireCommit>(&line) {
                Ok(w) => return Some(Ok(w.into())),
                Err(_) => self.skipped += 1,
            }
        }
        None
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadedDump {
    pub records: Vec<CommitRecord>,
    pub skipped: usize,
}

pub fn load_commit_dump(path: impl AsRef<Path>) -> Result<LoadedDump> {
    let mut reader = DumpReader::open(path)?;
    let records = reader.by_ref().collect::<Result<Vec<_>>>()?;
    Ok(LoadedDump {
        records,
        skipped: reader.skipped(),
    })
}

pub fn write_commit_dump<'a, W: Write>(
    mut out: W,
    records: impl IntoIterator<Item = &'a CommitRecord>,
) -> std::io::Result<()> {
    let header = Header {
        schema: SCHEMA_VERSION.into(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for rec in records {
        serde_json::to_writer(&mut out, &WireCommit::from(rec))?;
        out.write_all(b"\n")?;
    }
    out.flush()
}
