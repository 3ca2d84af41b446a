//! Mutations under the safety envelope: edit plans built from server
//! `WorkspaceEdit`s, the workspace jail, transactional apply and the
//! guarded rename flow.

pub mod apply;
pub mod diff;
pub mod fsops;
pub mod git;
pub mod jail;
pub mod rename;

pub use apply::{apply_atomic, ApplyError, ApplyReport};
pub use jail::{check_jail, Jail, JailDecision};

use crate::error::{ErrorCode, LanserError, Result};
use crate::selector::IndexingMode;
use crate::text::LineIndex;
use crate::workspace::{digest_bytes, WorkspaceSnapshot};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SafetyPolicy {
    pub workspace_jail: bool,
    pub allow_paths: Vec<String>,
    pub deny_paths: Vec<String>,
    pub allow_dirty: bool,
    pub deny_apply_on_ambiguous: bool,
}

impl Default for SafetyPolicy {
    fn default() -> Self {
        SafetyPolicy {
            workspace_jail: true,
            allow_paths: Vec::new(),
            deny_paths: Vec::new(),
            allow_dirty: false,
            deny_apply_on_ambiguous: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    DryRun,
    Apply,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Bom {
    #[default]
    None,
    Utf8,
    Utf16Le,
    Utf16Be,
}

/// On-disk text encoding of a file, restored when writing it back.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TextFormat {
    pub bom: Bom,
    pub crlf: bool,
}

impl TextFormat {
    /// Decodes `bytes`; `None` when they are neither UTF-8 nor BOM-marked
    /// UTF-16.
    pub fn decode(bytes: &[u8]) -> Option<(String, TextFormat)> {
        let bom = if bytes.starts_with(&[0xEF, 0xBB, 0xBF]) {
            Bom::Utf8
        } else if bytes.starts_with(&[0xFF, 0xFE]) {
            Bom::Utf16Le
        } else if bytes.starts_with(&[0xFE, 0xFF]) {
            Bom::Utf16Be
        } else {
            Bom::None
        };
        let text = crate::workspace::decode_text(bytes)?;
        let crlf = text.contains("\r\n");
        Some((text, TextFormat { bom, crlf }))
    }

    pub fn encode(&self, text: &str) -> Vec<u8> {
        let utf16 = |be: bool, mark: [u8; 2]| {
            let mut out = mark.to_vec();
            for u in text.encode_utf16() {
                out.extend_from_slice(&if be { u.to_be_bytes() } else { u.to_le_bytes() });
            }
            out
        };
        match self.bom {
            Bom::None => text.as_bytes().to_vec(),
            Bom::Utf8 => [&[0xEF, 0xBB, 0xBF][..], text.as_bytes()].concat(),
            Bom::Utf16Le => utf16(false, [0xFF, 0xFE]),
            Bom::Utf16Be => utf16(true, [0xFE, 0xFF]),
        }
    }

    /// Rewrites line breaks in inserted text to the file's style.
    pub fn normalize_newlines(&self, s: &str) -> String {
        if self.crlf {
            s.replace("\r\n", "\n").replace('\n', "\r\n")
        } else {
            s.to_string()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TextEdit {
    /// `[sL, sC, eL, eC]`, 1-based, in the server's position encoding.
    pub range: [u32; 4],
    #[serde(rename = "newText")]
    pub new_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileChange {
    /// Workspace-relative path, or an absolute path for targets outside
    /// the root (which the jail then refuses).
    pub rel: String,
    pub base_digest: String,
    pub format: TextFormat,
    pub before: String,
    pub after: String,
    pub edits: Vec<TextEdit>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileRename {
    pub from: String,
    pub to: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EditPlan {
    pub changes: Vec<FileChange>,
    pub renames: Vec<FileRename>,
    pub mode: Mode,
}

fn lsp_range(v: &Value) -> Option<[u32; 4]> {
    let n = |p: &str| v.pointer(p).and_then(Value::as_u64).map(|x| x as u32 + 1);
    Some([
        n("/start/line")?,
        n("/start/character")?,
        n("/end/line")?,
        n("/end/character")?,
    ])
}

fn bad_edit(msg: impl Into<String>) -> LanserError {
    LanserError::new(ErrorCode::Internal, msg)
}

impl EditPlan {
    pub fn empty(mode: Mode) -> Self {
        EditPlan {
            changes: Vec::new(),
            renames: Vec::new(),
            mode,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.changes.is_empty() && self.renames.is_empty()
    }

    /// Builds a plan from an LSP `WorkspaceEdit`. Text comes from the
    /// snapshot when tracked, else from disk. `rel_of` maps server URIs to
    /// workspace-relative paths.
    pub fn from_workspace_edit(
        edit: &Value,
        snapshot: &WorkspaceSnapshot,
        encoding: IndexingMode,
        mode: Mode,
        rel_of: impl Fn(&str) -> Option<String>,
    ) -> Result<EditPlan> {
        let to_rel = |uri: &str| -> String {
            rel_of(uri).unwrap_or_else(|| {
                url::Url::parse(uri)
                    .ok()
                    .and_then(|u| u.to_file_path().ok())
                    .map(|p| p.display().to_string())
                    .unwrap_or_else(|| uri.to_string())
            })
        };
        let mut per_file: BTreeMap<String, Vec<TextEdit>> = BTreeMap::new();
        let mut renames = Vec::new();
        let mut push_edits = |uri: &str, edits: &Value| -> Result<()> {
            let list = edits
                .as_array()
                .ok_or_else(|| bad_edit("text edits must be an array"))?;
            let slot = per_file.entry(to_rel(uri)).or_default();
            for e in list {
                let range = e
                    .get("range")
                    .and_then(lsp_range)
                    .ok_or_else(|| bad_edit("text edit without a range"))?;
                let new_text = e.get("newText").and_then(Value::as_str).unwrap_or("").to_string();
                slot.push(TextEdit { range, new_text });
            }
            Ok(())
        };
        if let Some(changes) = edit.get("changes").and_then(Value::as_object) {
            for (uri, edits) in changes {
                push_edits(uri, edits)?;
            }
        }
        if let Some(doc_changes) = edit.get("documentChanges").and_then(Value::as_array) {
            for dc in doc_changes {
                match dc.get("kind").and_then(Value::as_str) {
                    None => {
                        let uri = dc
                            .pointer("/textDocument/uri")
                            .and_then(Value::as_str)
                            .ok_or_else(|| bad_edit("document edit without a uri"))?;
                        push_edits(uri, dc.get("edits").unwrap_or(&Value::Null))?;
                    }
                    Some("rename") => {
                        let get = |k: &str| dc.get(k).and_then(Value::as_str).map(&to_rel);
                        let (Some(from), Some(to)) = (get("oldUri"), get("newUri")) else {
                            return Err(bad_edit("rename operation without uris"));
                        };
                        renames.push(FileRename { from, to });
                    }
                    Some(other) => {
                        return Err(LanserError::new(
                            ErrorCode::UnsupportedCap,
                            format!("'{other}' resource operations are not supported"),
                        ))
                    }
                }
            }
        }
        let mut changes = Vec::new();
        for (rel, edits) in per_file {
            if edits.is_empty() {
                continue;
            }
            let (bytes, base_digest) = match snapshot.get(&rel) {
                Some(entry) if entry.text.is_some() => (None, entry.digest.clone()),
                _ => {
                    let path = snapshot.root.join(&rel);
                    let b = std::fs::read(&path).map_err(|e| LanserError::fs(e, format!("reading {rel}")))?;
                    let d = digest_bytes(&b);
                    (Some(b), d)
                }
            };
            let (before, format) = match bytes {
                Some(b) => TextFormat::decode(&b),
                None => {
                    let disk = std::fs::read(snapshot.root.join(&rel)).ok();
                    let fmt = disk.as_deref().and_then(TextFormat::decode).map(|(_, f)| f);
                    let text = snapshot.get(&rel).and_then(|e| e.text()).unwrap_or("").to_string();
                    Some((text, fmt.unwrap_or_default()))
                }
            }
            .ok_or_else(|| {
                LanserError::new(
                    ErrorCode::FsPermissions,
                    format!("{rel} is not valid UTF-8 or BOM-marked UTF-16; refusing to edit"),
                )
            })?;
            let after = apply_text_edits(&before, &edits, encoding, &format)?;
            changes.push(FileChange {
                rel,
                base_digest,
                format,
                before,
                after,
                edits,
            });
        }
        Ok(EditPlan { changes, renames, mode })
    }

    pub fn touched_files(&self) -> Vec<String> {
        let mut v: Vec<String> = self.changes.iter().map(|c| c.rel.clone()).collect();
        for r in &self.renames {
            v.push(r.from.clone());
            v.push(r.to.clone());
        }
        v.sort();
        v.dedup();
        v
    }

    /// Concatenated per-file unified diffs in path order.
    pub fn diff(&self) -> String {
        let mut out = String::new();
        for c in &self.changes {
            out.push_str(&diff::unified_diff(&c.rel, &c.before, &c.after));
        }
        for r in &self.renames {
            out.push_str(&format!("rename from {}\nrename to {}\n", r.from, r.to));
        }
        out
    }

    /// The plan as a `WorkspaceEdit` over workspace-relative uris with
    /// 1-based flat ranges, for the bundle.
    pub fn workspace_edit_value(&self) -> Value {
        let changes: serde_json::Map<String, Value> =
            self.changes.iter().map(|c| (c.rel.clone(), json!(c.edits))).collect();
        let mut v = json!({ "changes": changes });
        if !self.renames.is_empty() {
            v["renames"] = self
                .renames
                .iter()
                .map(|r| json!({ "from": r.from, "to": r.to }))
                .collect();
        }
        v
    }

    pub fn path_of(root: &Path, rel: &str) -> PathBuf {
        root.join(rel)
    }
}

/// Applies non-overlapping edits to `text`.
pub fn apply_text_edits(text: &str, edits: &[TextEdit], encoding: IndexingMode, format: &TextFormat) -> Result<String> {
    let lines = LineIndex::new(text);
    let mut spans = Vec::with_capacity(edits.len());
    for e in edits {
        let [sl, sc, el, ec] = e.range;
        let s = lines.offset(text, sl, sc, encoding)?;
        let t = lines.offset(text, el, ec, encoding)?;
        if t < s {
            return Err(bad_edit(format!("inverted edit range {:?}", e.range)));
        }
        spans.push((s, t, format.normalize_newlines(&e.new_text)));
    }
    spans.sort_by_key(|(s, t, _)| (*s, *t));
    for pair in spans.windows(2) {
        if pair[1].0 < pair[0].1 {
            return Err(bad_edit("overlapping text edits"));
        }
    }
    let mut out = String::with_capacity(text.len());
    let mut at = 0;
    for (s, t, new) in spans {
        out.push_str(&text[at..s]);
        out.push_str(&new);
        at = t;
    }
    out.push_str(&text[at..]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formats_round_trip() {
        for bytes in [
            b"a\r\nb\r\n".to_vec(),
            [&[0xEF, 0xBB, 0xBF][..], b"x\n"].concat(),
            vec![0xFF, 0xFE, b'h', 0, b'\n', 0],
            vec![0xFE, 0xFF, 0, b'h'],
        ] {
            let (text, fmt) = TextFormat::decode(&bytes).unwrap();
            assert_eq!(fmt.encode(&text), bytes);
        }
        assert!(TextFormat::decode(&[0xC3]).is_none());
    }

    #[test]
    fn edits_apply_in_order_and_keep_crlf() {
        let fmt = TextFormat {
            bom: Bom::None,
            crlf: true,
        };
        let text = "def old():\r\n    return old\r\n";
        let edits = vec![
            TextEdit {
                range: [2, 12, 2, 15],
                new_text: "new".into(),
            },
            TextEdit {
                range: [1, 5, 1, 8],
                new_text: "new".into(),
            },
            TextEdit {
                range: [3, 1, 3, 1],
                new_text: "# end\n".into(),
            },
        ];
        let out = apply_text_edits(text, &edits, IndexingMode::Utf16, &fmt).unwrap();
        assert_eq!(out, "def new():\r\n    return new\r\n# end\r\n");
        let overlapping = vec![
            TextEdit {
                range: [1, 1, 1, 5],
                new_text: String::new(),
            },
            TextEdit {
                range: [1, 3, 1, 6],
                new_text: String::new(),
            },
        ];
        assert!(apply_text_edits(text, &overlapping, IndexingMode::Utf16, &fmt).is_err());
    }

    #[test]
    fn plan_from_changes_and_document_changes() {
        let ws = WorkspaceSnapshot::from_texts("/nonexistent", [("a.py", "x = 1\n"), ("b.py", "y = x\n")]);
        let edit = json!({
            "changes": {"file:///r/a.py": [{"range": {"start": {"line": 0, "character": 0}, "end": {"line": 0, "character": 1}}, "newText": "z"}]},
            "documentChanges": [{"textDocument": {"uri": "file:///r/b.py", "version": 1},
                                 "edits": [{"range": {"start": {"line": 0, "character": 4}, "end": {"line": 0, "character": 5}}, "newText": "z"}]}]
        });
        let rel = |u: &str| u.strip_prefix("file:///r/").map(str::to_string);
        let plan = EditPlan::from_workspace_edit(&edit, &ws, IndexingMode::Utf16, Mode::DryRun, rel).unwrap();
        assert_eq!(plan.touched_files(), vec!["a.py", "b.py"]);
        assert_eq!(plan.changes[1].after, "y = z\n");
        assert!(plan.diff().contains("--- a/a.py\n+++ b/a.py\n"));
        let create = json!({"documentChanges": [{"kind": "create", "uri": "file:///r/c.py"}]});
        let e = EditPlan::from_workspace_edit(&create, &ws, IndexingMode::Utf16, Mode::DryRun, rel).unwrap_err();
        assert_eq!(e.code, ErrorCode::UnsupportedCap);
    }
}
