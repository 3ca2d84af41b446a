//! Analysis Bundles: the canonical, content-hashed response envelope.
//!
//! `bundleId` is SHA-256 over the JCS form of
//! `{request, resolution, facts, edits, environment, capabilities, meta}`
//! with the volatile meta fields removed. `version`, `status` and
//! `processReward` sit outside the hash domain: status and the reward are
//! functions of hashed content.

use crate::error::{ErrorCode, LanserError};
use crate::jcs;
use crate::relocate::Resolution;
use crate::reward::{self, RewardRecord};
use crate::selector::IndexingMode;
use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

pub const ENVELOPE_VERSION: &str = "1.2";
pub const HASH_ALGO: &str = "sha256-jcs-v1";
/// Meta fields excluded from the hash domain.
pub const VOLATILE_META: [&str; 4] = ["timestamp", "duration_ms", "pid", "trace"];
pub const HASH_DOMAIN: [&str; 7] = [
    "request",
    "resolution",
    "facts",
    "edits",
    "environment",
    "capabilities",
    "meta",
];
pub const SORTING_KEYS: [&str; 5] = ["uri", "range[0]", "range[1]", "range[2]", "range[3]"];
pub const REFERENCE_CAP: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Location {
    pub uri: String,
    pub range: [u32; 4],
}

impl Location {
    pub fn new(uri: impl Into<String>, range: [u32; 4]) -> Self {
        Location { uri: uri.into(), range }
    }
}

/// Stable sort by `(uri, sL, sC, eL, eC)`.
pub fn sort_by_location<T>(items: &mut [T], key: impl Fn(&T) -> (&str, [u32; 4])) {
    items.sort_by(|a, b| key(a).cmp(&key(b)));
}

pub fn sort_locations(mut locs: Vec<Location>) -> Vec<Location> {
    sort_by_location(&mut locs, |l| (l.uri.as_str(), l.range));
    locs
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServerInfo {
    pub name: String,
    pub version: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EnvironmentCapture {
    pub server: ServerInfo,
    pub position_encoding: IndexingMode,
    pub python_exe: Option<String>,
    pub python_version: Option<String>,
    pub venv_path: Option<String>,
    pub config_digest: String,
    pub platform: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Capabilities {
    pub partial_result: bool,
    pub cancellable: bool,
}

impl Default for Capabilities {
    fn default() -> Self {
        Capabilities {
            partial_result: false,
            cancellable: true,
        }
    }
}

/// One conflicting region of a file that could not be patched.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConflictHunk {
    pub file: String,
    pub hunk_header: String,
    pub ours: String,
    pub theirs: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Edits {
    #[serde(rename = "workspaceEdit")]
    pub workspace_edit: Option<Value>,
    pub diff: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub conflicts: Vec<ConflictHunk>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisBundle {
    pub version: String,
    #[serde(rename = "bundleId")]
    pub bundle_id: String,
    pub status: Status,
    pub request: Value,
    pub resolution: Value,
    pub facts: Value,
    pub edits: Edits,
    #[serde(rename = "processReward", default, skip_serializing_if = "Option::is_none")]
    pub process_reward: Option<RewardRecord>,
    pub environment: Option<EnvironmentCapture>,
    pub capabilities: Capabilities,
    pub meta: Map<String, Value>,
}

impl AnalysisBundle {
    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("bundle serializes")
    }

    /// JCS bytes of the whole envelope.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        jcs::canonicalize(&self.to_value()).expect("bundle numbers are finite")
    }

    pub fn exit_code(&self) -> i32 {
        self.meta.get("exit_code").and_then(Value::as_i64).unwrap_or(0) as i32
    }

    pub fn error_code(&self) -> Option<ErrorCode> {
        self.meta
            .get("error")
            .and_then(|e| e.get("symbol"))
            .and_then(Value::as_str)
            .and_then(ErrorCode::from_symbol)
    }
}

/// Volatile metadata, attached only on request and never hashed.
#[derive(Debug, Clone, Default)]
pub struct Volatile {
    pub timestamp: Option<String>,
    pub duration_ms: Option<u64>,
    pub pid: Option<u32>,
    pub trace: Option<Value>,
}

/// Everything a command contributes to its bundle.
#[derive(Debug, Clone)]
pub struct BundleParts {
    pub cmd: String,
    pub selector: Value,
    pub args: Option<Value>,
    pub resolution: Option<Resolution>,
    pub facts: Value,
    pub edits: Edits,
    pub reward: Option<RewardRecord>,
    pub environment: Option<EnvironmentCapture>,
    pub capabilities: Capabilities,
    pub error: Option<LanserError>,
    /// Extra non-volatile meta entries (relocation parameters, truncation).
    pub meta: Map<String, Value>,
    pub volatile: Option<Volatile>,
}

impl BundleParts {
    pub fn new(cmd: impl Into<String>) -> Self {
        BundleParts {
            cmd: cmd.into(),
            selector: Value::Null,
            args: None,
            resolution: None,
            facts: json!({}),
            edits: Edits::default(),
            reward: None,
            environment: None,
            capabilities: Capabilities::default(),
            error: None,
            meta: Map::new(),
            volatile: None,
        }
    }
}

pub fn build(parts: BundleParts) -> AnalysisBundle {
    let mut request = Map::new();
    request.insert("cmd".into(), Value::String(parts.cmd));
    request.insert("selector".into(), parts.selector);
    if let Some(args) = parts.args {
        request.insert("args".into(), args);
    }
    let mut meta = parts.meta;
    let exit_code = parts.error.as_ref().map_or(0, |e| e.code.exit_code());
    meta.insert("exit_code".into(), json!(exit_code));
    meta.insert("sorting_keys".into(), json!(SORTING_KEYS));
    meta.insert(
        "hashing".into(),
        json!({
            "algo": HASH_ALGO,
            "volatile": VOLATILE_META.iter().map(|f| format!("meta.{f}")).collect::<Vec<_>>(),
        }),
    );
    if let Some(e) = &parts.error {
        let mut err = json!({
            "symbol": e.code.symbol(),
            "message": e.message,
            "retryable": e.code.retryable(),
        });
        if let Some(d) = &e.details {
            err["details"] = d.clone();
        }
        meta.insert("error".into(), err);
    }
    if let Some(v) = parts.volatile {
        if let Some(t) = v.timestamp {
            meta.insert("timestamp".into(), json!(t));
        }
        if let Some(d) = v.duration_ms {
            meta.insert("duration_ms".into(), json!(d));
        }
        if let Some(p) = v.pid {
            meta.insert("pid".into(), json!(p));
        }
        if let Some(t) = v.trace {
            meta.insert("trace".into(), t);
        }
    }
    let mut bundle = AnalysisBundle {
        version: ENVELOPE_VERSION.into(),
        bundle_id: String::new(),
        status: if parts.error.is_some() {
            Status::Error
        } else {
            Status::Ok
        },
        request: Value::Object(request),
        resolution: parts
            .resolution
            .map_or(Value::Null, |r| serde_json::to_value(r).expect("resolution serializes")),
        facts: parts.facts,
        edits: parts.edits,
        process_reward: parts.reward,
        environment: parts.environment,
        capabilities: parts.capabilities,
        meta,
    };
    bundle.bundle_id = compute_bundle_id(&bundle.to_value());
    bundle
}

/// Digest of the whole envelope with the volatile metadata removed. Two
/// runs that agree on everything but timing share this digest.
pub fn stable_digest(bundle: &AnalysisBundle) -> String {
    let mut v = bundle.to_value();
    if let Some(meta) = v.get_mut("meta").and_then(Value::as_object_mut) {
        for key in VOLATILE_META {
            meta.remove(key);
        }
    }
    jcs::sha256_of(&v).expect("bundle numbers are finite")
}

/// The hash-domain projection of a serialized bundle.
pub fn hash_domain(bundle: &Value) -> Value {
    let mut domain = Map::new();
    for key in HASH_DOMAIN {
        let mut v = bundle.get(key).cloned().unwrap_or(Value::Null);
        if key == "meta" {
            if let Value::Object(m) = &mut v {
                for f in VOLATILE_META {
                    m.remove(f);
                }
            }
        }
        domain.insert(key.into(), v);
    }
    Value::Object(domain)
}

pub fn compute_bundle_id(bundle: &Value) -> String {
    jcs::sha256_of(&hash_domain(bundle)).expect("serde_json numbers are finite")
}

// ---------------------------------------------------------------------------
// pagination

pub fn encode_cursor(last: &Location) -> String {
    let key = json!([last.uri, last.range[0], last.range[1], last.range[2], last.range[3]]);
    URL_SAFE_NO_PAD.encode(jcs::canonicalize(&key).expect("integers are finite"))
}

pub fn decode_cursor(cursor: &str) -> Result<Location, LanserError> {
    let bad = || {
        LanserError::new(
            ErrorCode::BadSelectorSyntax,
            format!("malformed pagination cursor '{cursor}'"),
        )
    };
    let bytes = URL_SAFE_NO_PAD.decode(cursor).map_err(|_| bad())?;
    let (uri, a, b, c, d): (String, u32, u32, u32, u32) = serde_json::from_slice(&bytes).map_err(|_| bad())?;
    Ok(Location::new(uri, [a, b, c, d]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Page {
    pub items: Vec<Location>,
    pub truncated: bool,
    /// Sort key of the last emitted entry when truncated.
    pub cursor: Option<String>,
}

/// The slice of `locs` (sorted here) strictly after `after`, capped at `cap`.
pub fn paginate(locs: Vec<Location>, after: Option<&str>, cap: usize) -> Result<Page, LanserError> {
    let sorted = sort_locations(locs);
    let start = match after {
        Some(c) => {
            let key = decode_cursor(c)?;
            sorted.partition_point(|l| (l.uri.as_str(), l.range) <= (key.uri.as_str(), key.range))
        }
        None => 0,
    };
    let rest = &sorted[start..];
    let truncated = rest.len() > cap;
    let items: Vec<Location> = rest.iter().take(cap).cloned().collect();
    let cursor = if truncated {
        items.last().map(encode_cursor)
    } else {
        None
    };
    Ok(Page {
        items,
        truncated,
        cursor,
    })
}

// ---------------------------------------------------------------------------
// validation

fn is_flat_range(v: &Value) -> bool {
    v.as_array()
        .is_some_and(|a| a.len() == 4 && a.iter().all(|x| x.as_u64().is_some_and(|n| n <= u64::from(u32::MAX))))
}

fn location_key(v: &Value) -> Option<(String, Vec<u64>)> {
    let o = v.as_object()?;
    if o.contains_key("score") {
        return None;
    }
    let uri = o.get("uri")?.as_str()?.to_string();
    let range = o
        .get("range")?
        .as_array()?
        .iter()
        .map(|x| x.as_u64())
        .collect::<Option<Vec<_>>>()?;
    Some((uri, range))
}

fn walk(v: &Value, path: &str, out: &mut Vec<String>) {
    match v {
        Value::Object(m) => {
            for (k, child) in m {
                let p = format!("{path}/{k}");
                if matches!(k.as_str(), "range" | "selectionRange") && !is_flat_range(child) {
                    out.push(format!("range shape at {p}: expected flat [sL,sC,eL,eC] integer array"));
                    continue;
                }
                walk(child, &p, out);
            }
        }
        Value::Array(a) => {
            let keys: Vec<_> = a.iter().map(location_key).collect();
            if keys.len() > 1 && keys.iter().all(Option::is_some) {
                for (i, pair) in keys.windows(2).enumerate() {
                    if pair[0] > pair[1] {
                        out.push(format!(
                            "ordering at {path}/{}: entries not sorted by (uri, sL, sC, eL, eC)",
                            i + 1
                        ));
                        break;
                    }
                }
            }
            for (i, child) in a.iter().enumerate() {
                walk(child, &format!("{path}/{i}"), out);
            }
        }
        _ => {}
    }
}

/// Checks schema conformance, list ordering, range shape, the bundleId,
/// truncation markers, exit-code agreement and the reward block.
pub fn validate_bundle(bytes: &[u8]) -> Result<(), Vec<String>> {
    let value: Value = match serde_json::from_slice(bytes) {
        Ok(v) => v,
        Err(e) => return Err(vec![format!("not a JSON document: {e}")]),
    };
    let mut out: Vec<String> = crate::schema::validate(&crate::schema::bundle_schema(), &value)
        .into_iter()
        .map(|v| format!("schema {v}"))
        .collect();
    walk(&value, "", &mut out);

    let stored = value.get("bundleId").and_then(Value::as_str).unwrap_or_default();
    let recomputed = compute_bundle_id(&value);
    if stored != recomputed {
        out.push(format!("bundleId mismatch: stored {stored}, recomputed {recomputed}"));
    }

    let meta = value.get("meta").cloned().unwrap_or(Value::Null);
    if meta.get("truncated").and_then(Value::as_bool) == Some(true) && !meta.get("cursor").is_some_and(Value::is_string)
    {
        out.push("truncation marker without pagination cursor".into());
    }
    if let Some(refs) = value.pointer("/facts/references").and_then(Value::as_array) {
        if refs.len() > REFERENCE_CAP {
            out.push(format!("references exceed the cap of {REFERENCE_CAP}"));
        }
    }

    let err_symbol = meta.pointer("/error/symbol").and_then(Value::as_str);
    let expected_exit = match err_symbol {
        Some(s) => match ErrorCode::from_symbol(s) {
            Some(c) => Some(c.exit_code()),
            None => {
                out.push(format!("unknown error symbol {s}"));
                None
            }
        },
        None => Some(0),
    };
    let exit = meta.get("exit_code").and_then(Value::as_i64);
    if let (Some(want), Some(got)) = (expected_exit, exit) {
        if i64::from(want) != got {
            out.push(format!(
                "exit code disagreement: meta.exit_code {got} but error implies {want}"
            ));
        }
    }
    let status = value.get("status").and_then(Value::as_str);
    if (status == Some("error")) != err_symbol.is_some() {
        out.push("status disagrees with meta.error".into());
    }
    if let Some(res_err) = value.pointer("/resolution/error").and_then(Value::as_str) {
        if Some(res_err) != err_symbol {
            out.push(format!("resolution error {res_err} disagrees with meta.error"));
        }
    }
    if value.get("processReward").is_some_and(|v| !v.is_null()) {
        if let Err(e) = reward::replay_reward(&value) {
            out.push(format!("processReward: {}", e.message));
        }
    }

    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> AnalysisBundle {
        let mut parts = BundleParts::new("refs");
        parts.selector = json!({"kind": "symbol", "module": "pkg.mod", "qualname": "f", "role": "def", "overload": 0});
        parts.facts = json!({
            "provenance": "lsp",
            "references": sort_locations(vec![Location::new("b.py", [1, 1, 1, 2]), Location::new("a.py", [9, 9, 9, 9])]),
        });
        build(parts)
    }

    #[test]
    fn self_consistent() {
        let b = sample();
        assert_eq!(validate_bundle(&b.canonical_bytes()), Ok(()));
        assert_eq!(b.exit_code(), 0);
    }

    #[test]
    fn volatile_fields_do_not_hash() {
        let a = sample();
        let mut parts = BundleParts::new("refs");
        parts.selector = a.request["selector"].clone();
        parts.facts = a.facts.clone();
        parts.volatile = Some(Volatile {
            timestamp: Some("2026-01-01T00:00:00Z".into()),
            duration_ms: Some(12),
            pid: Some(42),
            trace: Some(json!({"file": "/tmp/t.jsonl"})),
        });
        let b = build(parts);
        assert_eq!(a.bundle_id, b.bundle_id);
        assert_ne!(a.canonical_bytes(), b.canonical_bytes());
    }

    #[test]
    fn violations() {
        let mut v = sample().to_value();
        v["facts"]["references"][0]["range"] = json!([[1, 1], [1, 2]]);
        let errs = validate_bundle(&serde_json::to_vec(&v).unwrap()).unwrap_err();
        assert!(errs.iter().any(|e| e.starts_with("range shape")), "{errs:?}");
        assert!(errs.iter().any(|e| e.starts_with("bundleId mismatch")), "{errs:?}");

        let mut v = sample().to_value();
        v["facts"]["references"].as_array_mut().unwrap().reverse();
        let errs = validate_bundle(&serde_json::to_vec(&v).unwrap()).unwrap_err();
        assert!(errs.iter().any(|e| e.starts_with("ordering")), "{errs:?}");
    }

    #[test]
    fn pages_are_disjoint_and_cover() {
        let locs: Vec<Location> = (0..10)
            .rev()
            .map(|i| Location::new(format!("f{}.py", i % 3), [i, 1, i, 2]))
            .collect();
        let mut seen = Vec::new();
        let mut cursor: Option<String> = None;
        loop {
            let page = paginate(locs.clone(), cursor.as_deref(), 4).unwrap();
            seen.extend(page.items.clone());
            assert_eq!(page.truncated, page.cursor.is_some());
            match page.cursor {
                Some(c) => cursor = Some(c),
                None => break,
            }
        }
        assert_eq!(seen, sort_locations(locs));
        assert!(decode_cursor("!!").is_err());
    }
}
