//! Unified diffs and structured conflict hunks.

use crate::bundle::ConflictHunk;
use similar::{ChangeTag, TextDiff};

/// Unified diff of one file with three lines of context and `a/`, `b/`
/// headers. Empty when the texts are equal.
pub fn unified_diff(rel: &str, before: &str, after: &str) -> String {
    if before == after {
        return String::new();
    }
    TextDiff::from_lines(before, after)
        .unified_diff()
        .context_radius(3)
        .header(&format!("a/{rel}"), &format!("b/{rel}"))
        .to_string()
}

/// One hunk per differing region: `ours` is the text on disk, `theirs` the
/// text the plan would write.
pub fn conflict_hunks(rel: &str, ours: &str, theirs: &str) -> Vec<ConflictHunk> {
    let diff = TextDiff::from_lines(ours, theirs);
    let unified = diff.unified_diff();
    unified
        .iter_hunks()
        .map(|h| {
            let mut o = String::new();
            let mut t = String::new();
            for change in h.iter_changes() {
                match change.tag() {
                    ChangeTag::Equal => {
                        o.push_str(change.value());
                        t.push_str(change.value());
                    }
                    ChangeTag::Delete => o.push_str(change.value()),
                    ChangeTag::Insert => t.push_str(change.value()),
                }
            }
            ConflictHunk {
                file: rel.to_string(),
                hunk_header: h.header().to_string().trim_end().to_string(),
                ours: o,
                theirs: t,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diff_shape() {
        let d = unified_diff("pkg/m.py", "a\nb\nc\n", "a\nB\nc\n");
        assert!(
            d.starts_with("--- a/pkg/m.py\n+++ b/pkg/m.py\n@@ -1,3 +1,3 @@\n"),
            "{d}"
        );
        assert!(d.contains("-b\n+B\n"));
        assert_eq!(unified_diff("x", "same", "same"), "");
    }

    #[test]
    fn hunks_split_sides() {
        let h = conflict_hunks("f.py", "x = 1\ny = 2\n", "x = 1\ny = 3\n");
        assert_eq!(h.len(), 1);
        assert_eq!(h[0].hunk_header, "@@ -1,2 +1,2 @@");
        assert_eq!(h[0].ours, "x = 1\ny = 2\n");
        assert_eq!(h[0].theirs, "x = 1\ny = 3\n");
    }
}
