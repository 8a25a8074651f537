// SPDX-License-Identifier: Apache-2.0

//! TOML config files.
//!
//! Top-level keys set global options (`seed`, `threshold`, `workers`,
//! `log_level`). A table named after a subcommand sets that subcommand's
//! options, e.g. `[panel]` or `[value.surplus]`. Keys are long option names
//! with `-` or `_`. Options given on the command line win.
//!
//! ```toml
//! seed = 7
//! threshold = 0.5
//!
//! [libnet]
//! functions = "out/functions.ndjson"
//! topk = 5000
//! ```

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::parser::ValueSource;
use clap::{ArgMatches, Command};

use crate::io::usage;

/// The `--config` value, if any, found without a full parse.
pub fn find_config_flag(argv: &[OsString]) -> Option<PathBuf> {
    let mut it = argv.iter().skip(1);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--" {
            break;
        }
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(v));
        }
    }
    None
}

pub fn load(path: &Path) -> Result<toml::Table> {
    if !path.is_file() {
        anyhow::bail!("input file not found: {}", path.display());
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    text.parse::<toml::Table>()
        .map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn scalar(v: &toml::Value, key: &str) -> Result<String> {
    match v {
        toml::Value::String(s) => Ok(s.clone()),
        toml::Value::Integer(i) => Ok(i.to_string()),
        toml::Value::Float(f) => Ok(f.to_string()),
        toml::Value::Boolean(b) => Ok(b.to_string()),
        _ => Err(usage(format!("config key `{key}` must be a string, number or boolean"))),
    }
}

/// Appends `--key value` for every config entry of `table` whose option was
/// not given on the command line. Nested tables are left to the caller.
fn append(out: &mut Vec<OsString>, cmd: &Command, m: &ArgMatches, table: &toml::Table, scope: &str) -> Result<()> {
    for (key, value) in table {
        if value.is_table() {
            continue;
        }
        let id = key.replace('-', "_");
        let arg = cmd
            .get_arguments()
            .find(|a| a.get_id() == id.as_str() && a.get_long().is_some())
            .ok_or_else(|| usage(format!("unknown config key `{key}` in {scope}")))?;
        if m.value_source(&id) == Some(ValueSource::CommandLine) {
            continue;
        }
        let flag = format!("--{}", arg.get_long().unwrap());
        let takes_value = arg.get_action().takes_values();
        match value {
            toml::Value::Boolean(b) if !takes_value => {
                if *b {
                    out.push(flag.into());
                }
            }
            toml::Value::Array(items) => {
                out.push(flag.into());
                for it in items {
                    out.push(scalar(it, key)?.into());
                }
            }
            v => {
                out.push(flag.into());
                out.push(scalar(v, key)?.into());
            }
        }
    }
    Ok(())
}

/// Command line with config values filled in for options the user left out.
pub fn merge(argv: &[OsString], root: &Command, matches: &ArgMatches, cfg: &toml::Table) -> Result<Vec<OsString>> {
    let mut extra = Vec::new();
    append(&mut extra, root, matches, cfg, "the top level")?;

    let (mut cmd, mut m, mut table, mut scope) = (root, matches, Some(cfg), String::new());
    while let Some((name, sub_m)) = m.subcommand() {
        let sub = cmd.find_subcommand(name).expect("parsed subcommand exists");
        scope = if scope.is_empty() { name.to_string() } else { format!("{scope}.{name}") };
        table = match table.and_then(|t| t.get(name)) {
            Some(toml::Value::Table(t)) => Some(t),
            Some(_) => return Err(usage(format!("config key `{scope}` must be a table"))),
            None => None,
        };
        if let Some(t) = table {
            append(&mut extra, sub, sub_m, t, &format!("[{scope}]"))?;
        }
        cmd = sub;
        m = sub_m;
    }
    // Options of the innermost subcommand and global options are both
    // accepted at the end of the command line.
    let mut out = argv.to_vec();
    if argv.iter().any(|a| a == "--") {
        return Err(usage("`--` cannot be combined with --config"));
    }
    out.extend(extra);
    Ok(out)
}
