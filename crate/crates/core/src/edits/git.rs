//! Git integration: worktree cleanliness and optional three-way apply.

use crate::error::{ErrorCode, LanserError, Result};
use serde_json::json;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Stdio};

/// Paths with tracked modifications or staged changes. Untracked files do
/// not count; a directory outside any git repository (or a missing git)
/// is clean.
pub fn dirty_paths(root: &Path) -> Vec<String> {
    let out = Command::new("git")
        .arg("-C")
        .arg(root)
        .args(["status", "--porcelain", "--untracked-files=no"])
        .stderr(Stdio::null())
        .output();
    match out {
        Ok(o) if o.status.success() => String::from_utf8_lossy(&o.stdout)
            .lines()
            .filter(|l| l.len() > 3)
            .map(|l| l[3..].to_string())
            .collect(),
        _ => Vec::new(),
    }
}

pub fn require_clean(root: &Path, allow_dirty: bool) -> Result<()> {
    if allow_dirty {
        return Ok(());
    }
    let dirty = dirty_paths(root);
    if dirty.is_empty() {
        return Ok(());
    }
    Err(LanserError::new(
        ErrorCode::FsPermissions,
        format!(
            "worktree has uncommitted changes in {} file(s); commit them or pass --allow-dirty",
            dirty.len()
        ),
    )
    .with_details(json!({ "dirty": dirty })))
}

/// Applies a unified diff with `git apply --3way`.
pub fn apply_three_way(root: &Path, patch: &str) -> Result<()> {
    let mut child = Command::new("git")
        .arg("-C")
        .arg(root)
        .args(["apply", "--3way", "-"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| LanserError::new(ErrorCode::UnsupportedCap, format!("cannot run git: {e}")))?;
    child
        .stdin
        .take()
        .expect("stdin piped")
        .write_all(patch.as_bytes())
        .map_err(|e| LanserError::internal(format!("writing patch to git: {e}")))?;
    let out = child
        .wait_with_output()
        .map_err(|e| LanserError::internal(format!("waiting for git: {e}")))?;
    if out.status.success() {
        return Ok(());
    }
    let stderr = String::from_utf8_lossy(&out.stderr).into_owned();
    let conflicted: Vec<&str> = stderr.lines().filter_map(|l| l.strip_prefix("U ")).collect();
    Err(
        LanserError::new(ErrorCode::ApplyConflict, "git apply --3way reported conflicts")
            .with_details(json!({ "files": conflicted, "stderr": stderr })),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn non_repository_is_clean() {
        let dir = tempfile::tempdir().unwrap();
        assert!(dirty_paths(dir.path()).is_empty());
        assert!(require_clean(dir.path(), false).is_ok());
    }
}
