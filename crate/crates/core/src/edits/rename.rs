//! Guarded rename: prepare, preview, then (optionally) apply atomically and
//! notify the server.

use super::apply::{apply_atomic, ApplyReport};
use super::fsops::FsOps;
use super::jail::{Jail, JailDecision};
use super::{EditPlan, Mode, SafetyPolicy};
use crate::bundle::ConflictHunk;
use crate::error::{ErrorCode, LanserError, Result};
use crate::facts::{flat_range, lsp_position, pull_diagnostics};
use crate::orchestrator::Session;
use crate::relocate::Candidate;
use serde_json::{json, Value};
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub enum Prepare {
    Accepted {
        range: Option<[u32; 4]>,
        placeholder: Option<String>,
    },
    /// The server has no prepare support; the rename itself decides.
    NoProvider,
    Rejected,
}

impl Prepare {
    pub fn accepted(&self) -> bool {
        !matches!(self, Prepare::Rejected)
    }

    pub fn to_value(&self) -> Value {
        match self {
            Prepare::Accepted { range, placeholder } => {
                json!({ "accepted": true, "range": range, "placeholder": placeholder })
            }
            Prepare::NoProvider => json!({ "accepted": true, "range": null, "placeholder": null, "provider": false }),
            Prepare::Rejected => json!({ "accepted": false, "range": null, "placeholder": null }),
        }
    }
}

fn position_params(session: &Session, target: &Candidate) -> Value {
    json!({
        "textDocument": { "uri": session.abs_uri(&target.uri) },
        "position": lsp_position(target.focus),
    })
}

pub fn prepare_rename(session: &Session, target: &Candidate) -> Result<Prepare> {
    if !session.has_capability("renameProvider") {
        return Err(LanserError::new(
            ErrorCode::UnsupportedCap,
            "server does not provide rename",
        ));
    }
    session.ensure_open(&target.uri)?;
    match session.request("textDocument/prepareRename", position_params(session, target)) {
        Ok(Value::Null) => Ok(Prepare::Rejected),
        Ok(v) => {
            let range = v.get("range").and_then(flat_range).or_else(|| flat_range(&v));
            let placeholder = v.get("placeholder").and_then(Value::as_str).map(str::to_string);
            Ok(Prepare::Accepted { range, placeholder })
        }
        Err(e) if e.code == ErrorCode::UnsupportedCap => Ok(Prepare::NoProvider),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Default)]
pub struct RenameOutcome {
    pub prepare: Option<Prepare>,
    pub plan: Option<EditPlan>,
    pub diagnostics_before: u64,
    pub diagnostics_after: u64,
    pub jail_ok: bool,
    pub applied: Option<ApplyReport>,
    pub conflicts: Vec<ConflictHunk>,
    pub error: Option<LanserError>,
}

impl RenameOutcome {
    /// Safety pass: prepare accepted, jail holds and no conflicts.
    pub fn safety(&self) -> bool {
        self.prepare.as_ref().is_some_and(Prepare::accepted)
            && self.jail_ok
            && self.conflicts.is_empty()
            && self.error.as_ref().is_none_or(|e| e.code != ErrorCode::ApplyConflict)
    }
}

fn count_diagnostics(session: &Session, files: &[String]) -> Result<u64> {
    let mut n = 0;
    for rel in files {
        n += pull_diagnostics(session, rel)?.len() as u64;
    }
    Ok(n)
}

/// Runs the guarded rename. The worktree cleanliness check happens before
/// the session starts, so it is not repeated here.
pub fn guarded_rename(
    session: &Session,
    target: &Candidate,
    new_name: &str,
    mode: Mode,
    policy: &SafetyPolicy,
    fs: &dyn FsOps,
) -> RenameOutcome {
    let mut out = RenameOutcome::default();
    if let Err(e) = run(session, target, new_name, mode, policy, fs, &mut out) {
        out.error = Some(e);
    }
    out
}

fn run(
    session: &Session,
    target: &Candidate,
    new_name: &str,
    mode: Mode,
    policy: &SafetyPolicy,
    fs: &dyn FsOps,
    out: &mut RenameOutcome,
) -> Result<()> {
    let prepare = prepare_rename(session, target)?;
    out.prepare = Some(prepare.clone());
    if !prepare.accepted() {
        out.diagnostics_before = count_diagnostics(session, std::slice::from_ref(&target.uri))?;
        out.diagnostics_after = out.diagnostics_before;
        return Err(LanserError::new(
            ErrorCode::NotFound,
            format!(
                "server rejected rename at {}:{}:{}",
                target.uri, target.focus[0], target.focus[1]
            ),
        ));
    }
    let mut params = position_params(session, target);
    params["newName"] = json!(new_name);
    let edit = session.request("textDocument/rename", params)?;
    let snapshot = session.snapshot();
    let plan = EditPlan::from_workspace_edit(&edit, &snapshot, session.encoding(), mode, |u| session.rel_of(u))?;

    let mut scope: Vec<String> = plan
        .touched_files()
        .into_iter()
        .chain(std::iter::once(target.uri.clone()))
        .filter(|rel| snapshot.get(rel).is_some())
        .collect();
    scope.sort();
    scope.dedup();
    out.diagnostics_before = count_diagnostics(session, &scope)?;
    out.diagnostics_after = out.diagnostics_before;

    let jail = Jail::new(session.config().workspace_root.as_path(), policy)?;
    out.jail_ok = true;
    for rel in plan.touched_files() {
        if let JailDecision::Deny(reason) = jail.check(Path::new(&rel)) {
            out.jail_ok = false;
            out.plan = Some(plan);
            return Err(
                LanserError::new(ErrorCode::FsPermissions, format!("refusing to write {rel}: {reason}"))
                    .with_details(json!({ "path": rel, "reason": reason })),
            );
        }
    }

    let tracked: Vec<&super::FileChange> = plan.changes.iter().filter(|c| snapshot.get(&c.rel).is_some()).collect();
    match mode {
        Mode::DryRun => {
            for c in &tracked {
                session.ensure_open(&c.rel)?;
                session.sync_document(&c.rel, &c.after, None)?;
            }
            let after = count_diagnostics(session, &scope);
            for c in &tracked {
                session.sync_document(&c.rel, &c.before, None)?;
            }
            out.diagnostics_after = after?;
        }
        Mode::Apply => {
            match apply_atomic(&plan, session.config().workspace_root.as_path(), policy, fs) {
                Ok(report) => out.applied = Some(report),
                Err(e) => {
                    out.conflicts = e.conflicts;
                    out.plan = Some(plan);
                    return Err(e.error);
                }
            }
            for c in &tracked {
                session.ensure_open(&c.rel)?;
                session.sync_document(&c.rel, &c.after, None)?;
            }
            out.diagnostics_after = count_diagnostics(session, &scope)?;
        }
    }
    out.plan = Some(plan);
    Ok(())
}
