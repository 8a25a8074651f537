// SPDX-License-Identifier: Apache-2.0

//! Synthetic inputs shared by the benchmarks.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use codeprov_core::econometrics::FeData;
use codeprov_core::seed;
use rand::Rng;

/// `n` small Python functions of varying length and layout.
pub fn python_functions(n: usize, salt: u64) -> Vec<String> {
    let mut rng = seed::rng(salt, "bench/module");
    (0..n)
        .map(|i| {
            let mut s = format!("def f{i}(a, b):\n");
            if rng.random_bool(0.5) {
                s.push_str("    \"\"\"Combine a and b.\"\"\"\n\n");
            }
            for j in 0..rng.random_range(2..8) {
                if rng.random_bool(0.3) {
                    let _ = writeln!(s, "    # step {j}");
                }
                let _ = writeln!(s, "    x{j} = a * {j} + b");
            }
            s.push_str("    return x0\n");
            s
        })
        .collect()
}

/// A Python module holding [`python_functions`].
pub fn python_module(n: usize, salt: u64) -> String {
    let mut s = String::from("import os\nimport numpy as np\n\n");
    for f in python_functions(n, salt) {
        s.push_str(&f);
        s.push('\n');
    }
    s
}

/// `text` with about `share` of its lines rewritten.
pub fn edit_lines(text: &str, share: f64, salt: u64) -> String {
    let mut rng = seed::rng(salt, "bench/edit");
    text.lines()
        .map(|l| {
            if l.starts_with("    x") && rng.random_bool(share) {
                format!("{l} + 1\n")
            } else {
                format!("{l}\n")
            }
        })
        .collect()
}

/// Balanced panel with user and period effects and one true slope of 0.5.
pub fn fe_panel(n_users: usize, n_periods: usize, salt: u64) -> FeData {
    let mut rng = seed::rng(salt, "bench/panel");
    let alpha: Vec<f64> = (0..n_users).map(|_| rng.random_range(-1.0..1.0)).collect();
    let tau: Vec<f64> = (0..n_periods).map(|_| rng.random_range(-0.5..0.5)).collect();
    let mut d = FeData { names: vec!["x".into()], x: vec![Vec::new()], ..Default::default() };
    for (u, a) in alpha.iter().enumerate() {
        for (t, b) in tau.iter().enumerate() {
            let x = rng.random_range(0.0..1.0) + 0.3 * a;
            d.users.push(format!("u{u}"));
            d.periods.push(t as i64);
            d.x[0].push(x);
            d.y.push(0.5 * x + a + b + rng.random_range(-0.5..0.5));
        }
    }
    d
}

/// Project library sets drawn from `n_groups` blocks of `per_group`
/// libraries, mostly within one block.
pub fn project_libraries(n_projects: usize, n_groups: usize, per_group: usize, salt: u64) -> Vec<BTreeSet<String>> {
    let mut rng = seed::rng(salt, "bench/libs");
    (0..n_projects)
        .map(|p| {
            let g = p % n_groups;
            (0..rng.random_range(2..7))
                .map(|_| {
                    let block = if rng.random_bool(0.9) { g } else { rng.random_range(0..n_groups) };
                    format!("lib{}_{}", block, rng.random_range(0..per_group))
                })
                .collect()
        })
        .collect()
}
