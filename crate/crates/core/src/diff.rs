// SPDX-License-Identifier: Apache-2.0

//! Line-level diff.

use std::collections::BTreeSet;

use similar::{capture_diff_slices, Algorithm, DiffOp};

/// 1-based line numbers.
pub type LineSet = BTreeSet<usize>;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LineDiff {
    /// Lines of the new text that are inserted or changed.
    pub added: LineSet,
    /// Lines of the old text that are removed or changed.
    pub deleted: LineSet,
}

pub fn split_lines(text: &str) -> Vec<&str> {
    text.lines().collect()
}

pub fn diff_lines(old: &str, new: &str) -> LineDiff {
    let a = split_lines(old);
    let b = split_lines(new);
    let mut out = LineDiff::default();
    for op in capture_diff_slices(Algorithm::Myers, &a, &b) {
        match op {
            DiffOp::Equal { .. } => {}
            DiffOp::Delete { old_index, old_len, .. } => {
                out.deleted.extend(old_index + 1..=old_index + old_len);
            }
            DiffOp::Insert { new_index, new_len, .. } => {
                out.added.extend(new_index + 1..=new_index + new_len);
            }
            DiffOp::Replace { old_index, old_len, new_index, new_len } => {
                out.deleted.extend(old_index + 1..=old_index + old_len);
                out.added.extend(new_index + 1..=new_index + new_len);
            }
        }
    }
    out
}
