//! All-or-nothing multi-file apply: per file, write a synced temp file in
//! the same directory, hard-link the original into a transaction directory
//! and swap the temp file in with `rename`. Any failure before the commit
//! point renames the preserved originals back.

use super::diff::conflict_hunks;
use super::fsops::FsOps;
use super::jail::{Jail, JailDecision};
use super::{EditPlan, SafetyPolicy, TextFormat};
use crate::bundle::ConflictHunk;
use crate::error::{ErrorCode, LanserError};
use crate::workspace::digest_bytes;
use serde_json::json;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

pub const LOCK_FILE: &str = ".lanser.lock";
pub const TXN_DIR: &str = ".lanser-txn";

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ApplyReport {
    pub written: Vec<String>,
    pub renamed: Vec<(String, String)>,
}

#[derive(Debug, Clone)]
pub struct ApplyError {
    pub error: LanserError,
    pub conflicts: Vec<ConflictHunk>,
}

impl From<LanserError> for ApplyError {
    fn from(error: LanserError) -> Self {
        ApplyError {
            error,
            conflicts: Vec::new(),
        }
    }
}

fn fs_err(e: std::io::Error, what: impl std::fmt::Display) -> ApplyError {
    LanserError::fs(e, what).into()
}

/// Applies `plan` under the jail and filters of `policy`.
pub fn apply_atomic(
    plan: &EditPlan,
    root: &Path,
    policy: &SafetyPolicy,
    fs: &dyn FsOps,
) -> Result<ApplyReport, ApplyError> {
    if plan.is_empty() {
        return Ok(ApplyReport::default());
    }
    let jail = Jail::new(root, policy)?;
    let root = jail.root().to_path_buf();
    let lock = root.join(LOCK_FILE);
    match fs.create_new(&lock, std::process::id().to_string().as_bytes()) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
            return Err(LanserError::new(
                ErrorCode::FsPermissions,
                format!("another mutating operation holds {LOCK_FILE}"),
            )
            .into())
        }
        Err(e) => return Err(fs_err(e, format!("creating {LOCK_FILE}"))),
    }
    let result = locked_apply(plan, &root, &jail, fs);
    let _ = fs.remove_file(&lock);
    result
}

fn locked_apply(plan: &EditPlan, root: &Path, jail: &Jail, fs: &dyn FsOps) -> Result<ApplyReport, ApplyError> {
    let mut targets: Vec<&str> = plan.changes.iter().map(|c| c.rel.as_str()).collect();
    for r in &plan.renames {
        targets.push(&r.from);
        targets.push(&r.to);
    }
    for t in targets {
        if let JailDecision::Deny(reason) = jail.check(Path::new(t)) {
            return Err(
                LanserError::new(ErrorCode::FsPermissions, format!("refusing to write {t}: {reason}"))
                    .with_details(json!({ "path": t, "reason": reason }))
                    .into(),
            );
        }
    }

    let mut conflicts = Vec::new();
    for c in &plan.changes {
        let path = root.join(&c.rel);
        match fs.read(&path) {
            Ok(bytes) if digest_bytes(&bytes) == c.base_digest => {}
            Ok(bytes) => {
                let current = TextFormat::decode(&bytes).map(|(t, _)| t).unwrap_or_default();
                conflicts.extend(conflict_hunks(&c.rel, &current, &c.after));
            }
            Err(_) => conflicts.extend(conflict_hunks(&c.rel, "", &c.after)),
        }
    }
    if !conflicts.is_empty() {
        let files: std::collections::BTreeSet<&str> = conflicts.iter().map(|h| h.file.as_str()).collect();
        return Err(ApplyError {
            error: LanserError::new(
                ErrorCode::ApplyConflict,
                format!("{} file(s) changed since the plan was computed", files.len()),
            )
            .with_details(json!({ "files": files })),
            conflicts,
        });
    }

    for r in &plan.renames {
        let (from, to) = (root.join(&r.from), root.join(&r.to));
        let case_only = r.from != r.to && r.from.to_lowercase() == r.to.to_lowercase();
        let parent = to.parent().unwrap_or(root);
        if case_only
            && fs
                .case_insensitive(parent)
                .map_err(|e| fs_err(e, "probing case sensitivity"))?
        {
            return Err(LanserError::new(
                ErrorCode::FsPermissions,
                format!("case-only rename {} -> {} on a case-insensitive volume", r.from, r.to),
            )
            .into());
        }
        if !fs.exists(&from) {
            return Err(
                LanserError::new(ErrorCode::ApplyConflict, format!("rename source {} is missing", r.from)).into(),
            );
        }
        if fs.exists(&to) {
            return Err(LanserError::new(
                ErrorCode::ApplyConflict,
                format!("rename target {} already exists", r.to),
            )
            .into());
        }
    }

    static TXN_COUNTER: AtomicU64 = AtomicU64::new(0);
    let txn = root.join(TXN_DIR).join(format!(
        "{}-{}",
        std::process::id(),
        TXN_COUNTER.fetch_add(1, Ordering::SeqCst)
    ));
    let mut txn_state = Txn {
        fs,
        root,
        dir: txn.clone(),
        temps: Vec::new(),
        swapped: Vec::new(),
        moved: Vec::new(),
    };
    match txn_state.run(plan) {
        Ok(report) => {
            txn_state.commit();
            Ok(report)
        }
        Err(e) => {
            txn_state.rollback();
            Err(e)
        }
    }
}

struct Txn<'a> {
    fs: &'a dyn FsOps,
    root: &'a Path,
    dir: PathBuf,
    temps: Vec<PathBuf>,
    /// (target, backup) pairs already swapped.
    swapped: Vec<(PathBuf, PathBuf)>,
    /// (from, to) renames already performed.
    moved: Vec<(PathBuf, PathBuf)>,
}

impl Txn<'_> {
    fn run(&mut self, plan: &EditPlan) -> Result<ApplyReport, ApplyError> {
        let fs = self.fs;
        fs.create_dir_all(&self.dir)
            .map_err(|e| fs_err(e, "creating transaction directory"))?;
        let mut report = ApplyReport::default();
        for (i, c) in plan.changes.iter().enumerate() {
            let target = self.root.join(&c.rel);
            let name = target
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            let temp = target.with_file_name(format!(".{name}.lanser-tmp"));
            let perms = fs
                .permissions(&target)
                .map_err(|e| fs_err(e, format!("reading permissions of {}", c.rel)))?;
            self.temps.push(temp.clone());
            fs.write_synced(&temp, &c.format.encode(&c.after))
                .map_err(|e| fs_err(e, format!("writing temp file for {}", c.rel)))?;
            fs.set_permissions(&temp, perms)
                .map_err(|e| fs_err(e, format!("copying permissions for {}", c.rel)))?;
            let backup = self.dir.join(i.to_string());
            fs.hard_link(&target, &backup)
                .map_err(|e| fs_err(e, format!("preserving original of {}", c.rel)))?;
            fs.rename(&temp, &target)
                .map_err(|e| fs_err(e, format!("swapping {}", c.rel)))?;
            self.temps.pop();
            self.swapped.push((target, backup));
            report.written.push(c.rel.clone());
        }
        for r in &plan.renames {
            let (from, to) = (self.root.join(&r.from), self.root.join(&r.to));
            fs.rename(&from, &to)
                .map_err(|e| fs_err(e, format!("renaming {} to {}", r.from, r.to)))?;
            self.moved.push((from, to));
            report.renamed.push((r.from.clone(), r.to.clone()));
        }
        Ok(report)
    }

    fn cleanup_dir(&self) {
        let _ = self.fs.remove_dir_all(&self.dir);
        if let Some(parent) = self.dir.parent() {
            let _ = std::fs::remove_dir(parent);
        }
    }

    fn commit(&mut self) {
        let mut dirs: Vec<&Path> = self
            .swapped
            .iter()
            .map(|(t, _)| t.as_path())
            .chain(self.moved.iter().map(|(_, t)| t.as_path()))
            .filter_map(Path::parent)
            .collect();
        dirs.sort();
        dirs.dedup();
        for d in dirs {
            let _ = self.fs.sync_dir(d);
        }
        self.cleanup_dir();
    }

    fn rollback(&mut self) {
        for (from, to) in self.moved.drain(..).rev() {
            let _ = self.fs.rename(&to, &from);
        }
        for (target, backup) in self.swapped.drain(..).rev() {
            let _ = self.fs.rename(&backup, &target);
        }
        for temp in self.temps.drain(..) {
            if self.fs.exists(&temp) {
                let _ = self.fs.remove_file(&temp);
            }
        }
        self.cleanup_dir();
    }
}

#[cfg(test)]
mod tests {
    use super::super::fsops::{RealFs, ShimFs};
    use super::super::{FileChange, FileRename, Mode};
    use super::*;

    fn change(root: &Path, rel: &str, after: &str) -> FileChange {
        let bytes = std::fs::read(root.join(rel)).unwrap();
        let (before, format) = TextFormat::decode(&bytes).unwrap();
        FileChange {
            rel: rel.into(),
            base_digest: digest_bytes(&bytes),
            format,
            before,
            after: after.into(),
            edits: Vec::new(),
        }
    }

    #[test]
    fn empty_plan_touches_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let shim = ShimFs::new();
        let r = apply_atomic(
            &EditPlan::empty(Mode::Apply),
            dir.path(),
            &SafetyPolicy::default(),
            &shim,
        )
        .unwrap();
        assert_eq!(r, ApplyReport::default());
        assert!(shim.ops().is_empty());
    }

    #[test]
    fn applies_and_cleans_up() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.py"), "a\r\n").unwrap();
        let mut plan = EditPlan::empty(Mode::Apply);
        plan.changes.push(change(dir.path(), "a.py", "b\r\n"));
        apply_atomic(&plan, dir.path(), &SafetyPolicy::default(), &RealFs).unwrap();
        assert_eq!(std::fs::read_to_string(dir.path().join("a.py")).unwrap(), "b\r\n");
        assert!(!dir.path().join(LOCK_FILE).exists());
        assert!(!dir.path().join(TXN_DIR).exists());
    }

    #[test]
    fn drift_reports_conflicts_and_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.py"), "x = 1\n").unwrap();
        let mut plan = EditPlan::empty(Mode::Apply);
        plan.changes.push(change(dir.path(), "a.py", "x = 2\n"));
        std::fs::write(dir.path().join("a.py"), "x = 3\n").unwrap();
        let e = apply_atomic(&plan, dir.path(), &SafetyPolicy::default(), &RealFs).unwrap_err();
        assert_eq!(e.error.code, ErrorCode::ApplyConflict);
        assert_eq!(e.conflicts[0].ours, "x = 3\n");
        assert_eq!(e.conflicts[0].theirs, "x = 2\n");
        assert_eq!(std::fs::read_to_string(dir.path().join("a.py")).unwrap(), "x = 3\n");
    }

    #[test]
    fn held_lock_refuses() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.py"), "x\n").unwrap();
        std::fs::write(dir.path().join(LOCK_FILE), "1").unwrap();
        let mut plan = EditPlan::empty(Mode::Apply);
        plan.changes.push(change(dir.path(), "a.py", "y\n"));
        let e = apply_atomic(&plan, dir.path(), &SafetyPolicy::default(), &RealFs).unwrap_err();
        assert_eq!(e.error.code, ErrorCode::FsPermissions);
    }

    #[test]
    fn case_only_rename_on_case_insensitive_volume() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("file.py"), "x\n").unwrap();
        let mut plan = EditPlan::empty(Mode::Apply);
        plan.renames.push(FileRename {
            from: "file.py".into(),
            to: "File.py".into(),
        });
        let shim = ShimFs::case_insensitive();
        let e = apply_atomic(&plan, dir.path(), &SafetyPolicy::default(), &shim).unwrap_err();
        assert_eq!(e.error.code, ErrorCode::FsPermissions);
        assert!(dir.path().join("file.py").exists());
    }
}
