//! Minimal line diff (Myers, linear space).

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::normalize::NormalizedSource;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiffOp {
    Equal { old: usize, new: usize },
    Delete { old: usize },
    Insert { new: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffLine {
    /// Zero-based line index in the version the line belongs to.
    pub index: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct VersionDiff {
    /// Lines of v2 absent from v1, indexed in v2.
    pub added_lines: Vec<DiffLine>,
    /// Lines of v1 absent from v2, indexed in v1.
    pub removed_lines: Vec<DiffLine>,
    pub unchanged_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ApplyError {
    #[error("diff removes line {0}, which the base text does not have")]
    RemovedOutOfRange(usize),
    #[error("diff expects {expected} unchanged lines, the base text leaves {actual}")]
    UnchangedMismatch { expected: usize, actual: usize },
    #[error("added line index {0} is out of order or out of range")]
    BadAddedIndex(usize),
}

/// Splits canonical text into lines; the empty text has none.
pub fn text_lines(text: &str) -> Vec<&str> {
    if text.is_empty() {
        Vec::new()
    } else {
        text.split('\n').collect()
    }
}

/// Shortest edit script turning `a` into `b`. Ties prefer deletions first.
pub fn diff_lines<'t>(a: &[&'t str], b: &[&'t str]) -> Vec<DiffOp> {
    let mut ids: HashMap<&'t str, u32> = HashMap::new();
    let mut intern = |line: &'t str| -> u32 {
        let next = ids.len() as u32;
        *ids.entry(line).or_insert(next)
    };
    let a_ids: Vec<u32> = a.iter().map(|&l| intern(l)).collect();
    let b_ids: Vec<u32> = b.iter().map(|&l| intern(l)).collect();
    let mut ops = Vec::with_capacity(a.len() + b.len());
    let mut scratch = Scratch::default();
    diff_range(&a_ids, 0, &b_ids, 0, &mut ops, &mut scratch);
    ops
}

#[derive(Default)]
struct Scratch {
    forward: Vec<isize>,
    backward: Vec<isize>,
}

fn diff_range(a: &[u32], a0: usize, b: &[u32], b0: usize, ops: &mut Vec<DiffOp>, scratch: &mut Scratch) {
    let prefix = a.iter().zip(b).take_while(|(x, y)| x == y).count();
    for k in 0..prefix {
        ops.push(DiffOp::Equal { old: a0 + k, new: b0 + k });
    }
    let (a, b) = (&a[prefix..], &b[prefix..]);
    let (a0, b0) = (a0 + prefix, b0 + prefix);
    let suffix = a.iter().rev().zip(b.iter().rev()).take_while(|(x, y)| x == y).count();
    let (a, b) = (&a[..a.len() - suffix], &b[..b.len() - suffix]);

    if a.is_empty() {
        ops.extend((0..b.len()).map(|j| DiffOp::Insert { new: b0 + j }));
    } else if b.is_empty() {
        ops.extend((0..a.len()).map(|i| DiffOp::Delete { old: a0 + i }));
    } else {
        let (x, y, u, v) = middle_snake(a, b, scratch);
        diff_range(&a[..x], a0, &b[..y], b0, ops, scratch);
        for k in 0..(u - x) {
            ops.push(DiffOp::Equal { old: a0 + x + k, new: b0 + y + k });
        }
        diff_range(&a[u..], a0 + u, &b[v..], b0 + v, ops, scratch);
    }

    let (a_end, b_end) = (a0 + a.len(), b0 + b.len());
    for k in 0..suffix {
        ops.push(DiffOp::Equal { old: a_end + k, new: b_end + k });
    }
}

/// The middle snake `(x, y) -> (u, v)` of an optimal path through `a` x `b`.
/// Requires both inputs non-empty with differing first and last elements.
fn middle_snake(a: &[u32], b: &[u32], scratch: &mut Scratch) -> (usize, usize, usize, usize) {
    let n = a.len() as isize;
    let m = b.len() as isize;
    let delta = n - m;
    let odd = delta & 1 != 0;
    let max = (n + m + 1) / 2 + 1;
    let offset = max;
    let width = (2 * max + 1) as usize;
    scratch.forward.clear();
    scratch.forward.resize(width, 0);
    scratch.backward.clear();
    scratch.backward.resize(width, 0);
    let vf = &mut scratch.forward;
    let vb = &mut scratch.backward;
    let at = |k: isize| (k + offset) as usize;

    for d in 0..=max {
        let mut k = -d;
        while k <= d {
            let mut x = if k == -d || (k != d && vf[at(k - 1)] < vf[at(k + 1)]) { vf[at(k + 1)] } else { vf[at(k - 1)] + 1 };
            let mut y = x - k;
            let (x0, y0) = (x, y);
            while x < n && y < m && a[x as usize] == b[y as usize] {
                x += 1;
                y += 1;
            }
            vf[at(k)] = x;
            let kb = delta - k;
            if odd && kb > -d && kb < d && vf[at(k)] + vb[at(kb)] >= n {
                return (x0 as usize, y0 as usize, x as usize, y as usize);
            }
            k += 2;
        }
        let mut k = -d;
        while k <= d {
            let mut x = if k == -d || (k != d && vb[at(k - 1)] < vb[at(k + 1)]) { vb[at(k + 1)] } else { vb[at(k - 1)] + 1 };
            let mut y = x - k;
            let (x0, y0) = (x, y);
            while x < n && y < m && a[(n - 1 - x) as usize] == b[(m - 1 - y) as usize] {
                x += 1;
                y += 1;
            }
            vb[at(k)] = x;
            let kf = delta - k;
            if !odd && kf >= -d && kf <= d && vb[at(k)] + vf[at(kf)] >= n {
                return ((n - x) as usize, (m - y) as usize, (n - x0) as usize, (m - y0) as usize);
            }
            k += 2;
        }
    }
    unreachable!("an optimal path always has a middle snake")
}

impl VersionDiff {
    pub fn from_ops(a: &[&str], b: &[&str], ops: &[DiffOp]) -> Self {
        let mut diff = VersionDiff::default();
        for op in ops {
            match *op {
                DiffOp::Equal { .. } => diff.unchanged_count += 1,
                DiffOp::Delete { old } => diff.removed_lines.push(DiffLine { index: old, text: a[old].to_string() }),
                DiffOp::Insert { new } => diff.added_lines.push(DiffLine { index: new, text: b[new].to_string() }),
            }
        }
        diff
    }

    pub fn is_empty(&self) -> bool {
        self.added_lines.is_empty() && self.removed_lines.is_empty()
    }

    /// Rebuilds v2 from v1: drop removed lines, then place added lines at their v2 indices.
    pub fn apply(&self, base: &[&str]) -> Result<Vec<String>, ApplyError> {
        let mut removed = vec![false; base.len()];
        for line in &self.removed_lines {
            *removed.get_mut(line.index).ok_or(ApplyError::RemovedOutOfRange(line.index))? = true;
        }
        let kept: Vec<&str> = base.iter().zip(&removed).filter(|(_, &r)| !r).map(|(l, _)| *l).collect();
        if kept.len() != self.unchanged_count {
            return Err(ApplyError::UnchangedMismatch { expected: self.unchanged_count, actual: kept.len() });
        }
        let total = kept.len() + self.added_lines.len();
        let mut out = Vec::with_capacity(total);
        let mut kept_iter = kept.into_iter();
        let mut added = self.added_lines.iter().peekable();
        for index in 0..total {
            if added.peek().is_some_and(|l| l.index == index) {
                out.push(added.next().expect("peeked").text.clone());
            } else {
                out.push(kept_iter.next().ok_or(ApplyError::BadAddedIndex(index))?.to_string());
            }
        }
        if let Some(extra) = added.next() {
            return Err(ApplyError::BadAddedIndex(extra.index));
        }
        Ok(out)
    }

    /// Number of unchanged lines preceding each removed line (by v1 index) or
    /// added line (by v2 index). A removed and an added line with the same
    /// count sit in the same hunk.
    pub fn hunk_keys(&self, v1_len: usize, v2_len: usize) -> (Vec<usize>, Vec<usize>) {
        let mut removed_mark = vec![false; v1_len];
        for l in &self.removed_lines {
            removed_mark[l.index] = true;
        }
        let mut added_mark = vec![false; v2_len];
        for l in &self.added_lines {
            added_mark[l.index] = true;
        }
        let prefix_unchanged = |marks: &[bool], idx: usize| marks[..idx].iter().filter(|&&m| !m).count();
        (
            self.removed_lines.iter().map(|l| prefix_unchanged(&removed_mark, l.index)).collect(),
            self.added_lines.iter().map(|l| prefix_unchanged(&added_mark, l.index)).collect(),
        )
    }
}

pub fn diff_texts(v1: &str, v2: &str) -> VersionDiff {
    let a = text_lines(v1);
    let b = text_lines(v2);
    VersionDiff::from_ops(&a, &b, &diff_lines(&a, &b))
}

pub fn diff_versions(v1: &NormalizedSource, v2: &NormalizedSource) -> VersionDiff {
    diff_texts(&v1.canonical_text, &v2.canonical_text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Exhaustive LCS length by dynamic programming.
    fn lcs_len(a: &[&str], b: &[&str]) -> usize {
        let mut dp = vec![vec![0usize; b.len() + 1]; a.len() + 1];
        for i in (0..a.len()).rev() {
            for j in (0..b.len()).rev() {
                dp[i][j] = if a[i] == b[j] { dp[i + 1][j + 1] + 1 } else { dp[i + 1][j].max(dp[i][j + 1]) };
            }
        }
        dp[0][0]
    }

    fn check(a: &[&str], b: &[&str]) {
        let ops = diff_lines(a, b);
        let diff = VersionDiff::from_ops(a, b, &ops);
        assert_eq!(diff.unchanged_count, lcs_len(a, b), "{a:?} -> {b:?}");
        for op in &ops {
            if let DiffOp::Equal { old, new } = *op {
                assert_eq!(a[old], b[new]);
            }
        }
        assert_eq!(diff.apply(a).unwrap(), b.iter().map(|s| s.to_string()).collect::<Vec<_>>());
    }

    #[test]
    fn identical_texts() {
        let d = diff_texts("a\nb\nc", "a\nb\nc");
        assert!(d.is_empty());
        assert_eq!(d.unchanged_count, 3);
    }

    #[test]
    fn appended_line() {
        let d = diff_texts("a\nb", "a\nb\nc");
        assert_eq!(d.added_lines, vec![DiffLine { index: 2, text: "c".into() }]);
        assert!(d.removed_lines.is_empty());
    }

    #[test]
    fn empty_sides() {
        check(&[], &[]);
        check(&["a", "b"], &[]);
        check(&[], &["a"]);
        assert_eq!(diff_texts("", "x").added_lines.len(), 1);
    }

    #[test]
    fn classic_example() {
        let a: Vec<&str> = "ABCABBA".split("").filter(|s| !s.is_empty()).collect();
        let b: Vec<&str> = "CBABAC".split("").filter(|s| !s.is_empty()).collect();
        check(&a, &b);
        assert_eq!(VersionDiff::from_ops(&a, &b, &diff_lines(&a, &b)).unchanged_count, 4);
    }

    #[test]
    fn thirty_lines_with_four_line_edit() {
        let a: Vec<String> = (0..30).map(|i| format!("line {i};")).collect();
        let mut b = a.clone();
        b[5] = "changed 5;".into();
        b.insert(12, "inserted;".into());
        b.remove(20);
        b.insert(25, "tail insert;".into());
        let a_ref: Vec<&str> = a.iter().map(String::as_str).collect();
        let b_ref: Vec<&str> = b.iter().map(String::as_str).collect();
        check(&a_ref, &b_ref);
        let d = VersionDiff::from_ops(&a_ref, &b_ref, &diff_lines(&a_ref, &b_ref));
        assert_eq!(d.added_lines.len() + d.removed_lines.len(), 5);
    }

    #[test]
    fn hunk_keys_pair_replacements() {
        let d = diff_texts("a\nx\nb\nc", "a\ny\nb\nc\nz");
        let (removed, added) = d.hunk_keys(4, 5);
        assert_eq!(removed, vec![1]);
        assert_eq!(added, vec![1, 3]);
    }

    #[test]
    fn apply_rejects_mismatched_base() {
        let d = diff_texts("a\nb", "a\nc");
        assert!(d.apply(&["a"]).is_err());
    }

    proptest! {
        #[test]
        fn matches_lcs_oracle(a in prop::collection::vec(0u8..4, 0..16), b in prop::collection::vec(0u8..4, 0..16)) {
            let words = ["alpha", "beta", "gamma", "delta"];
            let a: Vec<&str> = a.iter().map(|&i| words[i as usize]).collect();
            let b: Vec<&str> = b.iter().map(|&i| words[i as usize]).collect();
            check(&a, &b);
        }
    }
}
