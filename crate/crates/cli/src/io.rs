// SPDX-License-Identifier: Apache-2.0

//! File helpers shared by the subcommands.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// A bad invocation rather than bad data; maps to exit code 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Unwraps a flag that may come from the command line or the config file.
pub fn need<T>(v: Option<T>, flag: &str) -> Result<T> {
    v.ok_or_else(|| usage(format!("missing required option --{flag}")))
}

/// Fails on the first input path that is not a readable file.
pub fn check_inputs<'a>(paths: impl IntoIterator<Item = &'a Path>) -> Result<()> {
    for p in paths {
        if !p.is_file() {
            anyhow::bail!("input file not found: {}", p.display());
        }
    }
    Ok(())
}

pub fn open(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(BufReader::new(f))
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

pub fn read_ndjson<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.with_context(|| format!("cannot read {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line).with_context(|| format!("{}:{}: malformed record", path.display(), i + 1))?;
        out.push(v);
    }
    Ok(out)
}

pub fn write_ndjson<'a, T: Serialize + 'a>(path: &Path, items: impl IntoIterator<Item = &'a T>) -> Result<usize> {
    let mut w = create(path)?;
    let mut n = 0;
    for it in items {
        serde_json::to_writer(&mut w, it)?;
        w.write_all(b"\n")?;
        n += 1;
    }
    w.flush().with_context(|| format!("cannot write {}", path.display()))?;
    Ok(n)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_reader(open(path)?).with_context(|| format!("{}: malformed JSON", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, v)?;
    w.write_all(b"\n")?;
    w.flush().with_context(|| format!("cannot write {}", path.display()))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_reader(open(path)?);
    r.deserialize()
        .enumerate()
        .map(|(i, rec)| rec.with_context(|| format!("{}: bad row {}", path.display(), i + 2)))
        .collect()
}

/// Writes JSON to `out`, or to stdout when no path is given.
pub fn emit_json<T: Serialize>(out: Option<&PathBuf>, v: &T) -> Result<()> {
    match out {
        Some(p) => write_json(p, v),
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            serde_json::to_writer_pretty(&mut lock, v)?;
            lock.write_all(b"\n")?;
            Ok(())
        }
    }
}
