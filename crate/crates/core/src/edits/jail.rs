//! Workspace jail: confines writes to the resolved project root, with
//! allow/deny globs where deny wins.

use super::SafetyPolicy;
use crate::error::{LanserError, Result};
use crate::workspace::rel_to_uri;
use globset::{Glob, GlobSet, GlobSetBuilder};
use std::path::{Component, Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum JailDecision {
    Allow,
    Deny(String),
}

impl JailDecision {
    pub fn is_allowed(&self) -> bool {
        matches!(self, JailDecision::Allow)
    }
}

fn globset(patterns: &[String]) -> Result<GlobSet> {
    let mut b = GlobSetBuilder::new();
    for p in patterns {
        b.add(Glob::new(p).map_err(|e| LanserError::internal(format!("bad path glob '{p}': {e}")))?);
    }
    b.build().map_err(|e| LanserError::internal(e.to_string()))
}

#[derive(Debug, Clone)]
pub struct Jail {
    root: PathBuf,
    enforce: bool,
    allow: Option<GlobSet>,
    deny: GlobSet,
    deny_patterns: Vec<String>,
}

/// Resolves symlinks in the longest existing prefix of `path`, then applies
/// the remaining components lexically.
pub fn resolve(path: &Path) -> std::io::Result<PathBuf> {
    let mut existing = path.to_path_buf();
    let mut rest = Vec::new();
    while std::fs::symlink_metadata(&existing).is_err() {
        match existing.file_name() {
            Some(name) => rest.push(name.to_os_string()),
            None if existing.ends_with("..") => rest.push("..".into()),
            None => break,
        }
        if !existing.pop() {
            break;
        }
    }
    let mut resolved = std::fs::canonicalize(&existing)?;
    for name in rest.into_iter().rev() {
        match Path::new(&name).components().next() {
            Some(Component::ParentDir) => {
                resolved.pop();
            }
            Some(Component::CurDir) | None => {}
            _ => resolved.push(name),
        }
    }
    Ok(resolved)
}

impl Jail {
    pub fn new(root: &Path, policy: &SafetyPolicy) -> Result<Jail> {
        let root = std::fs::canonicalize(root)
            .map_err(|e| LanserError::fs(e, format!("workspace root {}", root.display())))?;
        Ok(Jail {
            root,
            enforce: policy.workspace_jail,
            allow: (!policy.allow_paths.is_empty())
                .then(|| globset(&policy.allow_paths))
                .transpose()?,
            deny: globset(&policy.deny_paths)?,
            deny_patterns: policy.deny_paths.clone(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Decides whether `path` (absolute, or relative to the root) may be
    /// written.
    pub fn check(&self, path: &Path) -> JailDecision {
        let abs = if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.root.join(path)
        };
        let resolved = match resolve(&abs) {
            Ok(p) => p,
            Err(e) => return JailDecision::Deny(format!("cannot resolve {}: {e}", abs.display())),
        };
        let rel = match resolved.strip_prefix(&self.root) {
            Ok(rel) if rel.as_os_str().is_empty() => {
                return JailDecision::Deny("the workspace root itself is not a file".into());
            }
            Ok(rel) => rel_to_uri(rel),
            Err(_) if self.enforce => {
                return JailDecision::Deny(format!("{} escapes workspace root", resolved.display()));
            }
            Err(_) => resolved.display().to_string(),
        };
        let hits = self.deny.matches(&rel);
        if let Some(&i) = hits.first() {
            return JailDecision::Deny(format!("{rel} matches deny pattern '{}'", self.deny_patterns[i]));
        }
        if let Some(allow) = &self.allow {
            if !allow.is_match(&rel) {
                return JailDecision::Deny(format!("{rel} matches no allow pattern"));
            }
        }
        JailDecision::Allow
    }
}

pub fn check_jail(path: &Path, root: &Path, policy: &SafetyPolicy) -> Result<JailDecision> {
    Ok(Jail::new(root, policy)?.check(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("ws");
        std::fs::create_dir_all(root.join("src")).unwrap();
        std::fs::write(root.join("src/a.py"), "x = 1\n").unwrap();
        (dir, root)
    }

    #[test]
    fn inside_and_escaping() {
        let (_d, root) = setup();
        let p = SafetyPolicy::default();
        assert_eq!(
            check_jail(&root.join("src/a.py"), &root, &p).unwrap(),
            JailDecision::Allow
        );
        assert_eq!(
            check_jail(Path::new("src/new.py"), &root, &p).unwrap(),
            JailDecision::Allow
        );
        let d = check_jail(&root.join("../outside.py"), &root, &p).unwrap();
        assert!(
            matches!(&d, JailDecision::Deny(r) if r.contains("escapes workspace root")),
            "{d:?}"
        );
        let d = check_jail(Path::new("src/../../x.py"), &root, &p).unwrap();
        assert!(!d.is_allowed());
    }

    #[cfg(unix)]
    #[test]
    fn symlinks_resolve_before_the_check() {
        let (dir, root) = setup();
        let outside = dir.path().join("outside");
        std::fs::create_dir_all(&outside).unwrap();
        std::os::unix::fs::symlink(&outside, root.join("link")).unwrap();
        let d = check_jail(&root.join("link/x.py"), &root, &SafetyPolicy::default()).unwrap();
        assert!(matches!(&d, JailDecision::Deny(r) if r.contains("escapes")), "{d:?}");
    }

    #[test]
    fn deny_beats_allow() {
        let (_d, root) = setup();
        let p = SafetyPolicy {
            allow_paths: vec!["src/**".into()],
            deny_paths: vec!["src/a.py".into()],
            ..SafetyPolicy::default()
        };
        assert!(!check_jail(Path::new("src/a.py"), &root, &p).unwrap().is_allowed());
        assert!(check_jail(Path::new("src/b.py"), &root, &p).unwrap().is_allowed());
        assert!(!check_jail(Path::new("other.py"), &root, &p).unwrap().is_allowed());
    }
}
