//! Conversions from LSP results to bundle facts: locations, hover text,
//! flattened symbols and diagnostics.

use crate::bundle::{sort_by_location, Location};
use crate::error::{ErrorCode, Result};
use crate::jcs;
use crate::orchestrator::Session;
use crate::pyparse::DefKind;
use crate::reward::Diagnostic;
use crate::selector::IndexingMode;
use crate::workspace::WorkspaceSnapshot;
use serde_json::{json, Value};

/// LSP `Position` for a 1-based `(line, col)`.
pub fn lsp_position(focus: [u32; 2]) -> Value {
    json!({ "line": focus[0].saturating_sub(1), "character": focus[1].saturating_sub(1) })
}

/// Flat 1-based `[sL, sC, eL, eC]` from an LSP `Range`.
pub fn flat_range(range: &Value) -> Option<[u32; 4]> {
    let n = |p: &str| range.pointer(p).and_then(Value::as_u64).map(|x| x as u32 + 1);
    Some([
        n("/start/line")?,
        n("/start/character")?,
        n("/end/line")?,
        n("/end/character")?,
    ])
}

fn rel_or_uri(session: &Session, uri: &str) -> String {
    session.rel_of(uri).unwrap_or_else(|| uri.to_string())
}

/// Locations from a definition/references result: `null`, a `Location`,
/// or an array of `Location`s or `LocationLink`s. Sorted and deduplicated.
pub fn locations(result: &Value, session: &Session) -> Vec<Location> {
    let one = |v: &Value| -> Option<Location> {
        if let Some(uri) = v.get("targetUri").and_then(Value::as_str) {
            let r = v.get("targetSelectionRange").or_else(|| v.get("targetRange"))?;
            return Some(Location::new(rel_or_uri(session, uri), flat_range(r)?));
        }
        let uri = v.get("uri").and_then(Value::as_str)?;
        Some(Location::new(rel_or_uri(session, uri), flat_range(v.get("range")?)?))
    };
    let mut out: Vec<Location> = match result {
        Value::Array(items) => items.iter().filter_map(one).collect(),
        Value::Null => Vec::new(),
        v => one(v).into_iter().collect(),
    };
    out.sort();
    out.dedup();
    out
}

/// Plain text of a hover result.
pub fn hover_text(result: &Value) -> Option<String> {
    fn part(v: &Value) -> Option<String> {
        match v {
            Value::String(s) => Some(s.clone()),
            Value::Object(o) => o.get("value").and_then(Value::as_str).map(str::to_string),
            _ => None,
        }
    }
    match result.get("contents")? {
        Value::Array(items) => {
            let parts: Vec<String> = items.iter().filter_map(part).collect();
            (!parts.is_empty()).then(|| parts.join("\n\n"))
        }
        v => part(v),
    }
}

const SYMBOL_KINDS: [&str; 26] = [
    "file",
    "module",
    "namespace",
    "package",
    "class",
    "method",
    "property",
    "field",
    "constructor",
    "enum",
    "interface",
    "function",
    "variable",
    "constant",
    "string",
    "number",
    "boolean",
    "array",
    "object",
    "key",
    "null",
    "enumMember",
    "struct",
    "event",
    "operator",
    "typeParameter",
];

pub fn symbol_kind_name(kind: u64) -> &'static str {
    kind.checked_sub(1)
        .and_then(|i| SYMBOL_KINDS.get(i as usize))
        .copied()
        .unwrap_or("unknown")
}

/// Stable symbol identity: digest of the module, the dotted qualified name
/// and the kind path from the outermost container down.
pub fn symbol_id(module: &str, qualname: &str, kind_path: &[&str]) -> String {
    jcs::sha256_of(&json!([module, qualname, kind_path])).expect("strings are JSON")
}

/// Symbol identity of the definition whose name starts at `range` in a
/// tracked file, using the same kind names as `documentSymbol`.
pub fn symbol_id_at(snapshot: &WorkspaceSnapshot, uri: &str, range: [u32; 4], enc: IndexingMode) -> Option<String> {
    let entry = snapshot.get(uri)?;
    let text = entry.text()?;
    let offset = entry.lines()?.offset(text, range[0], range[1], enc).ok()?;
    let chain = entry.parsed()?.definition_named_at(offset)?;
    let mut kinds = Vec::with_capacity(chain.len());
    for (i, d) in chain.iter().enumerate() {
        kinds.push(match d.kind {
            DefKind::Class => "class",
            DefKind::Def if i > 0 && chain[i - 1].kind == DefKind::Class => "method",
            DefKind::Def => "function",
        });
    }
    let qualname: Vec<&str> = chain.iter().map(|d| d.name.as_str()).collect();
    Some(symbol_id(&snapshot.module_of(uri), &qualname.join("."), &kinds))
}

/// Flattens a `documentSymbol` result (hierarchical or flat) for one file.
pub fn flatten_symbols(result: &Value, rel: &str, module: &str, session: Option<&Session>) -> Vec<Value> {
    let mut out = Vec::new();
    fn walk(
        items: &[Value],
        rel: &str,
        module: &str,
        prefix: &str,
        kinds: &[&'static str],
        session: Option<&Session>,
        out: &mut Vec<Value>,
    ) {
        for s in items {
            let Some(name) = s.get("name").and_then(Value::as_str) else {
                continue;
            };
            let kind = symbol_kind_name(s.get("kind").and_then(Value::as_u64).unwrap_or(0));
            let qualname = match s.get("containerName").and_then(Value::as_str) {
                Some(c) if prefix.is_empty() && !c.is_empty() => format!("{c}.{name}"),
                _ if prefix.is_empty() => name.to_string(),
                _ => format!("{prefix}.{name}"),
            };
            let mut kind_path = kinds.to_vec();
            kind_path.push(kind);
            let (uri, range, selection) = match s.get("location") {
                Some(loc) => {
                    let uri = loc.get("uri").and_then(Value::as_str).unwrap_or("");
                    let uri = match session {
                        Some(sess) => sess.rel_of(uri).unwrap_or_else(|| uri.to_string()),
                        None => rel.to_string(),
                    };
                    (uri, loc.get("range").and_then(flat_range), None)
                }
                None => (
                    rel.to_string(),
                    s.get("range").and_then(flat_range),
                    s.get("selectionRange").and_then(flat_range),
                ),
            };
            let Some(range) = range else { continue };
            let mut entry = json!({
                "name": name,
                "qualname": qualname,
                "kind": kind,
                "uri": uri,
                "range": range,
                "symbolId": symbol_id(module, &qualname, &kind_path),
            });
            if let Some(sel) = selection {
                entry["selectionRange"] = json!(sel);
            }
            out.push(entry);
            if let Some(children) = s.get("children").and_then(Value::as_array) {
                walk(children, rel, module, &qualname, &kind_path, session, out);
            }
        }
    }
    if let Some(items) = result.as_array() {
        walk(items, rel, module, "", &[], session, &mut out);
    }
    out.sort_by(|a, b| a["qualname"].as_str().cmp(&b["qualname"].as_str()));
    sort_by_location(&mut out, |v| (v["uri"].as_str().unwrap_or(""), range_of(v)));
    out
}

fn range_of(v: &Value) -> [u32; 4] {
    serde_json::from_value(v["range"].clone()).unwrap_or([0; 4])
}

pub fn diagnostics_from(items: &[Value], rel: &str) -> Vec<Diagnostic> {
    let mut out: Vec<Diagnostic> = items
        .iter()
        .filter_map(|d| {
            let range = flat_range(d.get("range")?)?;
            Some(Diagnostic {
                uri: rel.to_string(),
                range,
                severity: d.get("severity").and_then(Value::as_u64).map(|s| s as u8),
                code: d.get("code").and_then(|c| match c {
                    Value::String(s) => Some(s.clone()),
                    Value::Number(n) => Some(n.to_string()),
                    _ => None,
                }),
                source: d.get("source").and_then(Value::as_str).map(str::to_string),
                message: d.get("message").and_then(Value::as_str).unwrap_or("").to_string(),
            })
        })
        .collect();
    sort_diagnostics(&mut out);
    out
}

pub fn sort_diagnostics(d: &mut [Diagnostic]) {
    d.sort_by(|a, b| (&a.uri, a.range, &a.message, &a.code).cmp(&(&b.uri, b.range, &b.message, &b.code)));
}

/// Current diagnostics for `rel`: pulled when the server offers pull
/// diagnostics, else the last pushed set.
pub fn pull_diagnostics(session: &Session, rel: &str) -> Result<Vec<Diagnostic>> {
    session.ensure_open(rel)?;
    if session.has_capability("diagnosticProvider") {
        let params = json!({ "textDocument": { "uri": session.abs_uri(rel) } });
        match session.request("textDocument/diagnostic", params) {
            Ok(v) => {
                let items = v.get("items").and_then(Value::as_array).cloned().unwrap_or_default();
                return Ok(diagnostics_from(&items, rel));
            }
            Err(e) if e.code == ErrorCode::UnsupportedCap => {}
            Err(e) => return Err(e),
        }
    }
    Ok(diagnostics_from(
        &session.published_diagnostics(rel).unwrap_or_default(),
        rel,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_and_hover() {
        let r = json!({"start": {"line": 0, "character": 4}, "end": {"line": 2, "character": 0}});
        assert_eq!(flat_range(&r), Some([1, 5, 3, 1]));
        assert_eq!(lsp_position([3, 7]), json!({"line": 2, "character": 6}));
        assert_eq!(
            hover_text(&json!({"contents": {"kind": "markdown", "value": "x"}})).as_deref(),
            Some("x")
        );
        assert_eq!(
            hover_text(&json!({"contents": ["a", {"language": "py", "value": "b"}]})).as_deref(),
            Some("a\n\nb")
        );
        assert_eq!(hover_text(&json!(null)), None);
    }

    #[test]
    fn hierarchical_symbols_flatten_in_location_order() {
        let rng = |l: u64| json!({"start": {"line": l, "character": 0}, "end": {"line": l + 1, "character": 0}});
        let result = json!([
            {"name": "f", "kind": 12, "range": rng(9), "selectionRange": rng(9)},
            {"name": "C", "kind": 5, "range": rng(0), "selectionRange": rng(0),
             "children": [{"name": "m", "kind": 6, "range": rng(1), "selectionRange": rng(1)}]}
        ]);
        let flat = flatten_symbols(&result, "p/m.py", "p.m", None);
        let names: Vec<&str> = flat.iter().map(|v| v["qualname"].as_str().unwrap()).collect();
        assert_eq!(names, ["C", "C.m", "f"]);
        assert_eq!(flat[1]["kind"], "method");
        assert_eq!(flat[1]["symbolId"], symbol_id("p.m", "C.m", &["class", "method"]));
    }
}
