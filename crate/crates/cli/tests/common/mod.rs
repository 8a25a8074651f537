// SPDX-License-Identifier: Apache-2.0

//! Deterministic generator for the bundled pipeline fixture.

#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use chrono::Duration;
use codeprov_core::ingest::write_commit_dump;
use codeprov_core::{CommitRecord, FileChange, Quarter};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const N_FUNCTIONS: usize = 500;
const N_USERS: usize = 12;
const N_QUARTERS: usize = 12;
const COUNTRIES: [&str; 3] = ["US", "DE", "IN"];
const LIB_GROUPS: [&[&str]; 3] = [
    &["numpy", "pandas", "scipy", "matplotlib"],
    &["flask", "requests", "jinja2", "werkzeug"],
    &["torch", "sklearn", "transformers", "tqdm"],
];
const VERBS: [&str; 6] = ["filter", "collect", "select", "gather", "extract", "keep"];

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures")
}

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_codeprov"))
}

pub fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("spawn codeprov")
}

/// Last stderr line, which carries the JSON run summary.
pub fn summary(out: &Output) -> serde_json::Value {
    let err = String::from_utf8_lossy(&out.stderr);
    let last = err.lines().last().unwrap_or_default();
    serde_json::from_str(last).unwrap_or_else(|e| panic!("no summary line ({e}): {err}"))
}

fn ai_style(rng: &mut ChaCha8Rng, i: usize) -> String {
    let verb = VERBS[rng.random_range(0..VERBS.len())];
    let mut s = format!("def {verb}_matching_records_{i}(records, threshold):\n");
    s.push_str(&format!(
        "    \"\"\"{}{verb} the records whose value exceeds the given threshold.\n\n",
        verb[..1].to_uppercase()
    ));
    s.push_str("    Args:\n        records: Iterable of numeric values to inspect.\n");
    s.push_str("        threshold: Lower bound that a value must exceed.\n\n");
    s.push_str("    Returns:\n        A list with the matching values in their original order.\n    \"\"\"\n");
    for j in 0..rng.random_range(1..4) {
        let _ = writeln!(s, "    # Step {j}: {verb} values above the configured threshold");
        let _ = writeln!(s, "    matching_values_{j} = [value for value in records if value > threshold]\n");
    }
    s.push_str("    return matching_values_0\n");
    s
}

fn human_style(rng: &mut ChaCha8Rng, i: usize) -> String {
    let mut s = format!("def f{i}(a, t):\n");
    for j in 0..rng.random_range(1..5) {
        let _ = writeln!(s, "    r{j} = [v for v in a if v > t + {j}]");
    }
    if rng.random_bool(0.3) {
        s.push_str("    # hack\n");
    }
    s.push_str("    return r0\n");
    s
}

/// AI adoption in quarter `t` (0 = 2021Q1): low until 2022, then rising.
fn adoption(t: usize) -> f64 {
    if t < 4 {
        0.05
    } else {
        0.05 + 0.06 * (t - 3) as f64
    }
}

/// A commit dump with exactly [`N_FUNCTIONS`] new functions.
pub fn fixture_commits(seed: u64) -> Vec<CommitRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = Quarter::new(2021, 1).unwrap();
    let mut per_cell = vec![0usize; N_USERS * N_QUARTERS];
    for _ in 0..N_FUNCTIONS {
        let cell = rng.random_range(0..per_cell.len());
        per_cell[cell] += 1;
    }
    let mut commits = Vec::new();
    let mut fn_index = 0;
    for (cell, &n) in per_cell.iter().enumerate() {
        let (u, t) = (cell / N_QUARTERS, cell % N_QUARTERS);
        let user_bias = 0.5 + (u % 4) as f64 * 0.25;
        let p_ai = (adoption(t) * user_bias).min(0.95);
        let group = LIB_GROUPS[u % LIB_GROUPS.len()];
        let q = start.offset(t as i64);
        let mut left = n;
        let mut c = 0;
        while left > 0 {
            let k = left.min(rng.random_range(1..=3));
            left -= k;
            let mut text = String::new();
            for _ in 0..rng.random_range(0..3) {
                let lib = if rng.random_bool(0.85) {
                    group[rng.random_range(0..group.len())]
                } else {
                    let g = LIB_GROUPS[rng.random_range(0..LIB_GROUPS.len())];
                    g[rng.random_range(0..g.len())]
                };
                let _ = writeln!(text, "import {lib}");
            }
            text.push('\n');
            for _ in 0..k {
                let code = if rng.random_bool(p_ai) { ai_style(&mut rng, fn_index) } else { human_style(&mut rng, fn_index) };
                text.push_str(&code);
                text.push('\n');
                fn_index += 1;
            }
            let mut files = vec![FileChange::new(format!("pkg/u{u:02}_q{t:02}_{c}.py"), None, Some(text))];
            if rng.random_bool(0.2) {
                files.push(FileChange::new(format!("docs/notes_{u:02}_{t:02}_{c}.md"), None, Some("notes\n".into())));
            }
            let ts = q.start() + Duration::hours(rng.random_range(1..24 * 88));
            commits.push(CommitRecord {
                commit_id: format!("c{u:02}{t:02}{c:02}"),
                user_id: format!("dev{u:02}"),
                project_id: format!("proj{}", u % 6),
                timestamp: ts,
                country: Some(COUNTRIES[u % COUNTRIES.len()].to_string()),
                parents: Vec::new(),
                files,
            });
            c += 1;
        }
    }
    commits.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.commit_id.cmp(&b.commit_id)));
    commits
}

/// Balanced labelled set for training the baseline scorer.
pub fn labeled_lines(seed: u64, n_per_class: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::new();
    for i in 0..n_per_class {
        for (code, label) in [(ai_style(&mut rng, i), true), (human_style(&mut rng, i), false)] {
            out.push_str(&serde_json::json!({ "code": code, "label": label }).to_string());
            out.push('\n');
        }
    }
    out
}

pub const PARAMS_JSON: &str = r#"{
  "*": { "tpr": 0.9, "fpr": 0.1 },
  "US": { "tpr": 0.9550, "fpr": 0.2321 }
}
"#;

pub const TASKS_CSV: &str = "\
occupation_id,task_id,freq_1,freq_2,freq_3,freq_4,freq_5,freq_6,freq_7,programming_share
15-1252,t1,0,0,0,0,0,0,1,0.8
15-1252,t2,0,0,0,0.5,0.5,0,0,0.1
15-2051,t1,0,0,0.2,0.3,0.5,0,0,0.4
";

pub const OCCUPATIONS_CSV: &str = "\
occupation_id,annual_wage,employment
15-1252,130000,1500000
15-2051,105000,180000
";

pub const CONFIG_TOML: &str = r#"seed = 11
threshold = 0.5

[mine]
dump = "commits.ndjson"
out = "out/functions.ndjson"

[train]
labeled = "labeled.ndjson"
out = "out/model.json"
epochs = 300

[score]
in = "out/functions.ndjson"
model = "out/model.json"
out = "out/scores.ndjson"

[libnet]
functions = "out/functions.ndjson"
alpha = 0.01
out = "out/communities.json"

[panel]
functions = "out/functions.ndjson"
scores = "out/scores.ndjson"
params = "params.json"
catmap = "out/communities.json"
min_functions = 3
burn_in = 2
out = "out/panel.csv"

[regress]
panel = "out/panel.csv"
y = "n_all_log1p"
out = "out/fit.json"
"#;

/// Writes every fixture file into `dir`.
pub fn write_fixture(dir: &Path) {
    std::fs::create_dir_all(dir).unwrap();
    let commits = fixture_commits(2024);
    let f = std::fs::File::create(dir.join("commits.ndjson")).unwrap();
    write_commit_dump(std::io::BufWriter::new(f), &commits).unwrap();
    std::fs::write(dir.join("labeled.ndjson"), labeled_lines(7, 120)).unwrap();
    std::fs::write(dir.join("params.json"), PARAMS_JSON).unwrap();
    std::fs::write(dir.join("tasks.csv"), TASKS_CSV).unwrap();
    std::fs::write(dir.join("occupations.csv"), OCCUPATIONS_CSV).unwrap();
    std::fs::write(dir.join("codeprov.toml"), CONFIG_TOML).unwrap();
}

/// Copies the bundled fixture into a scratch directory.
pub fn scratch() -> tempfile::TempDir {
    let tmp = tempfile::tempdir().unwrap();
    for e in std::fs::read_dir(fixtures_dir()).unwrap() {
        let e = e.unwrap();
        std::fs::copy(e.path(), tmp.path().join(e.file_name())).unwrap();
    }
    tmp
}

