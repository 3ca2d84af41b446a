//! Frozen workspace snapshots: per-file digests and text, document version
//! counters, and the module map used for structural resolution.

use crate::error::{ErrorCode, LanserError, Result};
use crate::jcs;
use crate::par::{self, Execution};
use crate::pyparse::{self, ParsedModule};
use crate::text::LineIndex;
use globset::{Glob, GlobSet, GlobSetBuilder};
use serde_json::json;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

/// Directories never descended into.
const SKIP_DIRS: &[&str] = &["__pycache__", "node_modules", "venv", ".lanser-txn"];

#[derive(Debug, Clone)]
pub struct TrackingConfig {
    pub include: Vec<String>,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        TrackingConfig {
            include: vec!["**/*.py".into(), "**/*.pyi".into()],
        }
    }
}

impl TrackingConfig {
    fn globset(&self) -> Result<GlobSet> {
        let mut b = GlobSetBuilder::new();
        for pat in &self.include {
            b.add(Glob::new(pat).map_err(|e| LanserError::internal(format!("bad include glob '{pat}': {e}")))?);
        }
        b.build().map_err(|e| LanserError::internal(e.to_string()))
    }
}

#[derive(Debug)]
pub struct FileEntry {
    /// `sha256:<hex>` of the raw bytes.
    pub digest: String,
    pub version: u64,
    /// Decoded text (BOM stripped); `None` when the bytes do not decode.
    pub text: Option<Arc<str>>,
    lines: OnceLock<LineIndex>,
    parsed: OnceLock<ParsedModule>,
}

impl FileEntry {
    pub fn new(bytes: &[u8], version: u64) -> Self {
        FileEntry {
            digest: digest_bytes(bytes),
            version,
            text: decode_text(bytes).map(Arc::from),
            lines: OnceLock::new(),
            parsed: OnceLock::new(),
        }
    }

    pub fn from_text(text: &str, version: u64) -> Self {
        FileEntry::new(text.as_bytes(), version)
    }

    pub fn text(&self) -> Option<&str> {
        self.text.as_deref()
    }

    pub fn lines(&self) -> Option<&LineIndex> {
        let text = self.text()?;
        Some(self.lines.get_or_init(|| LineIndex::new(text)))
    }

    pub fn parsed(&self) -> Option<&ParsedModule> {
        let text = self.text()?;
        Some(self.parsed.get_or_init(|| pyparse::parse_module(text)))
    }

    /// Whether `doc_version` names this entry's state: either the version
    /// counter in decimal or the content digest.
    pub fn matches_version(&self, doc_version: &str) -> bool {
        doc_version == self.version.to_string() || doc_version == self.digest
    }
}

pub fn digest_bytes(bytes: &[u8]) -> String {
    format!("sha256:{}", hex::encode(Sha256::digest(bytes)))
}

/// UTF-8 (optionally BOM-prefixed) or BOM-marked UTF-16.
pub fn decode_text(bytes: &[u8]) -> Option<String> {
    if let Some(rest) = bytes.strip_prefix(&[0xEF, 0xBB, 0xBF]) {
        return String::from_utf8(rest.to_vec()).ok();
    }
    let utf16 = |rest: &[u8], be: bool| -> Option<String> {
        if !rest.len().is_multiple_of(2) {
            return None;
        }
        let units: Vec<u16> = rest
            .chunks_exact(2)
            .map(|p| {
                if be {
                    u16::from_be_bytes([p[0], p[1]])
                } else {
                    u16::from_le_bytes([p[0], p[1]])
                }
            })
            .collect();
        String::from_utf16(&units).ok()
    };
    if let Some(rest) = bytes.strip_prefix(&[0xFF, 0xFE]) {
        return utf16(rest, false);
    }
    if let Some(rest) = bytes.strip_prefix(&[0xFE, 0xFF]) {
        return utf16(rest, true);
    }
    String::from_utf8(bytes.to_vec()).ok()
}

/// A selector resolution remembered for a document state, used by the
/// docVersion fast path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PinnedTarget {
    pub uri: String,
    pub range: [u32; 4],
    pub focus: Option<[u32; 2]>,
}

#[derive(Debug, Clone)]
pub struct WorkspaceSnapshot {
    pub root: PathBuf,
    pub files: BTreeMap<String, Arc<FileEntry>>,
    pub config_digest: String,
    /// `(canonical selector, docVersion)` -> target.
    pub pins: BTreeMap<(String, String), PinnedTarget>,
    modules: Arc<OnceLock<BTreeMap<String, Vec<String>>>>,
}

impl WorkspaceSnapshot {
    /// Walks `root`, digesting every tracked file.
    pub fn take(root: &Path, tracking: &TrackingConfig, config_digest: &str, exec: Execution) -> Result<Self> {
        let set = tracking.globset()?;
        let mut paths = Vec::new();
        let walker = walkdir::WalkDir::new(root)
            .sort_by_file_name()
            .into_iter()
            .filter_entry(|e| {
                if e.depth() == 0 || !e.file_type().is_dir() {
                    return true;
                }
                let name = e.file_name().to_string_lossy();
                !name.starts_with('.') && !SKIP_DIRS.contains(&name.as_ref())
            });
        for entry in walker {
            let entry =
                entry.map_err(|e| LanserError::new(ErrorCode::FsPermissions, format!("walking workspace: {e}")))?;
            if !entry.file_type().is_file() {
                continue;
            }
            let rel = entry
                .path()
                .strip_prefix(root)
                .map_err(|e| LanserError::internal(e.to_string()))?;
            let rel = rel_to_uri(rel);
            if set.is_match(&rel) {
                paths.push((rel, entry.path().to_path_buf()));
            }
        }
        let loaded = par::map(exec, &paths, |(rel, path)| {
            std::fs::read(path)
                .map(|bytes| (rel.clone(), Arc::new(FileEntry::new(&bytes, 0))))
                .map_err(|e| LanserError::fs(e, format!("reading {rel}")))
        });
        let files = loaded.into_iter().collect::<Result<BTreeMap<_, _>>>()?;
        Ok(WorkspaceSnapshot::from_files(root.to_path_buf(), files, config_digest))
    }

    pub fn from_files(root: PathBuf, files: BTreeMap<String, Arc<FileEntry>>, config_digest: &str) -> Self {
        WorkspaceSnapshot {
            root,
            files,
            config_digest: config_digest.to_string(),
            pins: BTreeMap::new(),
            modules: Arc::new(OnceLock::new()),
        }
    }

    /// In-memory snapshot from `(path, text)` pairs; handy for tests and benches.
    pub fn from_texts<'a>(root: impl Into<PathBuf>, texts: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        let files = texts
            .into_iter()
            .map(|(p, t)| (p.to_string(), Arc::new(FileEntry::from_text(t, 0))))
            .collect();
        WorkspaceSnapshot::from_files(root.into(), files, "sha256:none")
    }

    /// The determinism anchor: digest over every file digest plus the
    /// configuration digest.
    pub fn digest(&self) -> String {
        let files: serde_json::Map<String, serde_json::Value> =
            self.files.iter().map(|(k, v)| (k.clone(), json!(v.digest))).collect();
        jcs::sha256_of(&json!({ "configDigest": self.config_digest, "files": files })).expect("digests are strings")
    }

    pub fn get(&self, uri: &str) -> Option<&Arc<FileEntry>> {
        self.files.get(uri)
    }

    /// Replaces one file's content, bumping nothing else. Module map is
    /// rebuilt lazily.
    pub fn with_file(&self, uri: &str, entry: FileEntry) -> Self {
        let mut next = self.clone();
        next.files.insert(uri.to_string(), Arc::new(entry));
        next.modules = Arc::new(OnceLock::new());
        next
    }

    /// Workspace-relative form of a selector uri (relative path or file URI).
    pub fn relative_uri(&self, uri: &str) -> Option<String> {
        match uri.strip_prefix("file://") {
            Some(abs) => {
                let path = if abs.len() > 3 && abs.as_bytes()[2] == b':' {
                    &abs[1..]
                } else {
                    abs
                };
                let rel = Path::new(path).strip_prefix(&self.root).ok()?;
                Some(rel_to_uri(rel))
            }
            None => Some(uri.trim_start_matches("./").to_string()),
        }
    }

    /// Dotted module name -> files defining it, both in path order.
    pub fn modules(&self) -> &BTreeMap<String, Vec<String>> {
        self.modules.get_or_init(|| {
            let mut map: BTreeMap<String, Vec<String>> = BTreeMap::new();
            for uri in self.files.keys() {
                for m in module_names(uri) {
                    map.entry(m).or_default().push(uri.clone());
                }
            }
            for v in map.values_mut() {
                v.sort();
                v.dedup();
            }
            map
        })
    }

    pub fn module_of(&self, uri: &str) -> String {
        module_names(uri).into_iter().next().unwrap_or_default()
    }
}

pub fn rel_to_uri(rel: &Path) -> String {
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

/// Module names a file answers to: `pkg/mod.py` -> `pkg.mod`,
/// `pkg/__init__.py` -> `pkg`, and the same without a leading `src/`.
pub fn module_names(uri: &str) -> Vec<String> {
    let stem = uri
        .strip_suffix(".py")
        .or_else(|| uri.strip_suffix(".pyi"))
        .unwrap_or(uri);
    let stem = stem.strip_suffix("/__init__").unwrap_or(stem);
    let dotted = stem.replace('/', ".");
    let mut out = vec![dotted.clone()];
    if let Some(rest) = dotted.strip_prefix("src.") {
        out.push(rest.to_string());
    }
    out
}
