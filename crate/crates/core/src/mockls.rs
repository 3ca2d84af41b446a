//! A scriptable, deterministic LSP server used as a hermetic test fixture.
//!
//! Script format (JSON):
//!
//! ```json
//! {
//!   "serverInfo": {"name": "lanser-mockls", "version": "1"},
//!   "positionEncoding": "utf-16",
//!   "capabilities": {"renameProvider": null},
//!   "responses": [
//!     {"method": "textDocument/definition",
//!      "params": {"textDocument": {"uri": "${ROOT}/pkg/mod.py"}, "position": {"line": 3}},
//!      "result": [{"uri": "${ROOT}/pkg/helpers.py", "range": {...}}]}
//!   ],
//!   "diagnostics": [
//!     {"uri": "pkg/mod.py", "when_contains": "old_name(",
//!      "diagnostic": {"range": {...}, "severity": 1, "message": "undefined"}}
//!   ],
//!   "publish_diagnostics": false,
//!   "crash_after": 2,
//!   "delay_ms": {"textDocument/hover": 60000},
//!   "content_modified": ["textDocument/references"],
//!   "append_on": {"textDocument/rename": {"file": "pkg/mod.py", "text": "# edited\n"}}
//! }
//! ```
//!
//! `params` is a subset pattern; `${ROOT}` expands to the root URI without
//! its trailing slash. Capabilities merge over the defaults and a `null`
//! value withdraws one. Requests for methods without an advertised provider
//! get MethodNotFound; advertised methods without a matching rule answer
//! `null`, except pull diagnostics, which evaluate the diagnostic rules.
//! `append_on` appends to a workspace file on disk while handling a method,
//! standing in for an editor that saves concurrently.

use crate::orchestrator::framing::{read_frame, write_frame};
use crate::orchestrator::{CONTENT_MODIFIED, METHOD_NOT_FOUND, REQUEST_CANCELLED};
use serde::Deserialize;
use serde_json::{json, Map, Value};
use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, BufRead, Write};
use std::time::{Duration, Instant};

#[derive(Debug, Clone, Default, Deserialize)]
pub struct Rule {
    pub method: String,
    #[serde(default)]
    pub params: Option<Value>,
    #[serde(default)]
    pub result: Value,
    #[serde(default)]
    pub error: Option<Value>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct DiagnosticRule {
    /// Workspace-relative path.
    pub uri: String,
    #[serde(default)]
    pub when_contains: Option<String>,
    #[serde(default)]
    pub when_absent: Option<String>,
    pub diagnostic: Value,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Script {
    #[serde(default)]
    pub server_info: Option<Value>,
    #[serde(default)]
    pub position_encoding: Option<String>,
    #[serde(default)]
    pub capabilities: Map<String, Value>,
    #[serde(default)]
    pub responses: Vec<Rule>,
    #[serde(default)]
    pub diagnostics: Vec<DiagnosticRule>,
    #[serde(default, rename = "publish_diagnostics")]
    pub publish_diagnostics: bool,
    #[serde(default, rename = "crash_after")]
    pub crash_after: Option<u64>,
    #[serde(default, rename = "delay_ms")]
    pub delay_ms: BTreeMap<String, u64>,
    #[serde(default, rename = "content_modified")]
    pub content_modified: BTreeSet<String>,
    #[serde(default, rename = "append_on")]
    pub append_on: BTreeMap<String, Append>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct Append {
    pub file: String,
    pub text: String,
}

impl Script {
    pub fn from_json(text: &str) -> Result<Script, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn capabilities(&self) -> Map<String, Value> {
        let mut caps = match json!({
            "textDocumentSync": 1,
            "definitionProvider": true,
            "referencesProvider": true,
            "hoverProvider": true,
            "documentSymbolProvider": true,
            "renameProvider": { "prepareProvider": true },
            "diagnosticProvider": { "interFileDependencies": false, "workspaceDiagnostics": false },
        }) {
            Value::Object(m) => m,
            _ => unreachable!(),
        };
        for (k, v) in &self.capabilities {
            if v.is_null() {
                caps.remove(k);
            } else {
                caps.insert(k.clone(), v.clone());
            }
        }
        if let Some(enc) = &self.position_encoding {
            caps.insert("positionEncoding".into(), json!(enc));
        }
        caps
    }
}

/// How [`serve`] ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Exit,
    EndOfInput,
    Crash,
}

fn provider_for(method: &str) -> Option<&'static str> {
    Some(match method {
        "textDocument/definition" => "definitionProvider",
        "textDocument/references" => "referencesProvider",
        "textDocument/hover" => "hoverProvider",
        "textDocument/documentSymbol" => "documentSymbolProvider",
        "textDocument/rename" => "renameProvider",
        "textDocument/prepareRename" => "renameProvider",
        "textDocument/diagnostic" => "diagnosticProvider",
        _ => return None,
    })
}

/// `pattern` is contained in `value`: objects by key subset, everything
/// else by equality.
pub fn matches_pattern(pattern: &Value, value: &Value) -> bool {
    match (pattern, value) {
        (Value::Object(p), Value::Object(v)) => p
            .iter()
            .all(|(k, pv)| v.get(k).is_some_and(|vv| matches_pattern(pv, vv))),
        _ => pattern == value,
    }
}

fn substitute(v: &Value, root: &str) -> Value {
    match v {
        Value::String(s) => Value::String(s.replace("${ROOT}", root)),
        Value::Array(a) => Value::Array(a.iter().map(|x| substitute(x, root)).collect()),
        Value::Object(o) => Value::Object(
            o.iter()
                .map(|(k, x)| (k.replace("${ROOT}", root), substitute(x, root)))
                .collect(),
        ),
        other => other.clone(),
    }
}

struct Delayed {
    id: Value,
    due: Instant,
    reply: Value,
}

struct Server<'a, W: Write> {
    script: &'a Script,
    out: W,
    root: String,
    root_path: Option<std::path::PathBuf>,
    docs: BTreeMap<String, String>,
    counted: u64,
    delayed: Vec<Delayed>,
}

impl<W: Write> Server<'_, W> {
    fn send(&mut self, v: &Value) -> io::Result<()> {
        write_frame(&mut self.out, v)
    }

    fn rel_of(&self, uri: &str) -> Option<String> {
        uri.strip_prefix(&self.root)?.strip_prefix('/').map(str::to_string)
    }

    fn text_of(&self, rel: &str) -> Option<String> {
        if let Some(t) = self.docs.get(rel) {
            return Some(t.clone());
        }
        let path = self.root_path.as_ref()?.join(rel);
        std::fs::read_to_string(path).ok()
    }

    fn diagnostics_for(&self, rel: &str) -> Vec<Value> {
        let text = self.text_of(rel).unwrap_or_default();
        self.script
            .diagnostics
            .iter()
            .filter(|d| d.uri == rel)
            .filter(|d| d.when_contains.as_ref().is_none_or(|s| text.contains(s.as_str())))
            .filter(|d| d.when_absent.as_ref().is_none_or(|s| !text.contains(s.as_str())))
            .map(|d| substitute(&d.diagnostic, &self.root))
            .collect()
    }

    fn answer(&self, method: &str, params: &Value) -> Result<Value, Value> {
        let caps = self.script.capabilities();
        let rule = self.script.responses.iter().find(|r| {
            r.method == method
                && r.params
                    .as_ref()
                    .is_none_or(|p| matches_pattern(&substitute(p, &self.root), params))
        });
        if let Some(r) = rule {
            return match &r.error {
                Some(e) => Err(substitute(e, &self.root)),
                None => Ok(substitute(&r.result, &self.root)),
            };
        }
        match method {
            "shutdown" => return Ok(Value::Null),
            "initialize" => {
                let info = self
                    .script
                    .server_info
                    .clone()
                    .unwrap_or_else(|| json!({ "name": "lanser-mockls", "version": env!("CARGO_PKG_VERSION") }));
                return Ok(json!({ "capabilities": caps, "serverInfo": info }));
            }
            _ => {}
        }
        let advertised = provider_for(method).is_some_and(|p| caps.get(p).is_some_and(|v| v != &json!(false)));
        if !advertised {
            return Err(json!({ "code": METHOD_NOT_FOUND, "message": format!("method not found: {method}") }));
        }
        if method == "textDocument/diagnostic" {
            let uri = params
                .pointer("/textDocument/uri")
                .and_then(Value::as_str)
                .unwrap_or("");
            let items = self.rel_of(uri).map(|r| self.diagnostics_for(&r)).unwrap_or_default();
            return Ok(json!({ "kind": "full", "items": items }));
        }
        Ok(Value::Null)
    }

    fn publish(&mut self, uri: &str) -> io::Result<()> {
        if !self.script.publish_diagnostics {
            return Ok(());
        }
        let Some(rel) = self.rel_of(uri) else { return Ok(()) };
        let diags = self.diagnostics_for(&rel);
        self.send(&json!({
            "jsonrpc": "2.0",
            "method": "textDocument/publishDiagnostics",
            "params": { "uri": uri, "diagnostics": diags },
        }))
    }

    fn notification(&mut self, method: &str, params: &Value) -> io::Result<Option<Outcome>> {
        match method {
            "exit" => return Ok(Some(Outcome::Exit)),
            "$/cancelRequest" => {
                let id = params.get("id").cloned().unwrap_or(Value::Null);
                if let Some(pos) = self.delayed.iter().position(|d| d.id == id) {
                    let d = self.delayed.remove(pos);
                    self.send(&json!({
                        "jsonrpc": "2.0",
                        "id": d.id,
                        "error": { "code": REQUEST_CANCELLED, "message": "request cancelled" },
                    }))?;
                }
            }
            "textDocument/didOpen" => {
                let uri = params
                    .pointer("/textDocument/uri")
                    .and_then(Value::as_str)
                    .unwrap_or("")
                    .to_string();
                let text = params
                    .pointer("/textDocument/text")
                    .and_then(Value::as_str)
                    .unwrap_or("");
                if let Some(rel) = self.rel_of(&uri) {
                    self.docs.insert(rel, text.to_string());
                }
                self.publish(&uri)?;
            }
            "textDocument/didChange" => {
                let uri = params
                    .pointer("/textDocument/uri")
                    .and_then(Value::as_str)
                    .unwrap_or("")
                    .to_string();
                let text = params
                    .pointer("/contentChanges")
                    .and_then(Value::as_array)
                    .and_then(|c| c.last())
                    .and_then(|c| c.get("text"))
                    .and_then(Value::as_str);
                if let (Some(rel), Some(text)) = (self.rel_of(&uri), text) {
                    self.docs.insert(rel, text.to_string());
                }
                self.publish(&uri)?;
            }
            "textDocument/didClose" => {
                if let Some(rel) = params
                    .pointer("/textDocument/uri")
                    .and_then(Value::as_str)
                    .and_then(|u| self.rel_of(u))
                {
                    self.docs.remove(&rel);
                }
            }
            _ => {}
        }
        Ok(None)
    }

    fn request(&mut self, id: Value, method: &str, params: &Value) -> io::Result<Option<Outcome>> {
        if method == "initialize" {
            let root = params.get("rootUri").and_then(Value::as_str).unwrap_or("");
            self.root = root.trim_end_matches('/').to_string();
            self.root_path = url::Url::parse(root).ok().and_then(|u| u.to_file_path().ok());
        } else if method != "shutdown" {
            self.counted += 1;
            if self.script.crash_after.is_some_and(|n| self.counted >= n) {
                return Ok(Some(Outcome::Crash));
            }
        }
        if let (Some(a), Some(root)) = (self.script.append_on.get(method), &self.root_path) {
            let mut f = std::fs::OpenOptions::new().append(true).open(root.join(&a.file))?;
            f.write_all(a.text.as_bytes())?;
        }
        let reply = if self.script.content_modified.contains(method) {
            json!({ "jsonrpc": "2.0", "id": id, "error": { "code": CONTENT_MODIFIED, "message": "content modified" } })
        } else {
            match self.answer(method, params) {
                Ok(result) => json!({ "jsonrpc": "2.0", "id": id, "result": result }),
                Err(error) => json!({ "jsonrpc": "2.0", "id": id, "error": error }),
            }
        };
        match self.script.delay_ms.get(method) {
            Some(&ms) if ms > 0 => self.delayed.push(Delayed {
                id,
                due: Instant::now() + Duration::from_millis(ms),
                reply,
            }),
            _ => self.send(&reply)?,
        }
        Ok(None)
    }

    fn flush_due(&mut self) -> io::Result<()> {
        let now = Instant::now();
        let (due, keep): (Vec<_>, Vec<_>) = std::mem::take(&mut self.delayed)
            .into_iter()
            .partition(|d| d.due <= now);
        self.delayed = keep;
        for d in due {
            self.send(&d.reply)?;
        }
        Ok(())
    }
}

/// Serves `script` over a framed byte stream until `exit`, end of input or
/// a scripted crash.
pub fn serve<R, W>(script: &Script, input: R, output: W) -> io::Result<Outcome>
where
    R: BufRead + Send + 'static,
    W: Write,
{
    let (tx, rx) = crossbeam_channel::unbounded();
    std::thread::spawn(move || {
        let mut input = input;
        loop {
            let frame = read_frame(&mut input);
            let stop = !matches!(frame, Ok(Some(_)));
            if tx.send(frame).is_err() || stop {
                return;
            }
        }
    });
    let mut server = Server {
        script,
        out: output,
        root: String::new(),
        root_path: None,
        docs: BTreeMap::new(),
        counted: 0,
        delayed: Vec::new(),
    };
    loop {
        let next_due = server.delayed.iter().map(|d| d.due).min();
        let msg = match next_due {
            Some(due) => match rx.recv_timeout(due.saturating_duration_since(Instant::now())) {
                Ok(m) => m,
                Err(crossbeam_channel::RecvTimeoutError::Timeout) => {
                    server.flush_due()?;
                    continue;
                }
                Err(crossbeam_channel::RecvTimeoutError::Disconnected) => return Ok(Outcome::EndOfInput),
            },
            None => match rx.recv() {
                Ok(m) => m,
                Err(_) => return Ok(Outcome::EndOfInput),
            },
        };
        let frame = match msg {
            Ok(Some(f)) => f,
            Ok(None) => return Ok(Outcome::EndOfInput),
            Err(e) => return Err(e),
        };
        let method = frame.get("method").and_then(Value::as_str).map(str::to_string);
        let params = frame.get("params").cloned().unwrap_or(Value::Null);
        let outcome = match (method, frame.get("id").cloned()) {
            (Some(m), Some(id)) => server.request(id, &m, &params)?,
            (Some(m), None) => server.notification(&m, &params)?,
            _ => None,
        };
        if let Some(o) = outcome {
            return Ok(o);
        }
        server.flush_due()?;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn frames(msgs: &[Value]) -> Cursor<Vec<u8>> {
        let mut buf = Vec::new();
        for m in msgs {
            write_frame(&mut buf, m).unwrap();
        }
        Cursor::new(buf)
    }

    fn read_all(bytes: &[u8]) -> Vec<Value> {
        let mut r = io::BufReader::new(bytes);
        let mut out = Vec::new();
        while let Some(v) = read_frame(&mut r).unwrap() {
            out.push(v);
        }
        out
    }

    fn init() -> Value {
        json!({"jsonrpc": "2.0", "id": 1, "method": "initialize", "params": {"rootUri": "file:///ws/"}})
    }

    #[test]
    fn default_handshake_and_method_not_found() {
        let input = frames(&[
            init(),
            json!({"jsonrpc": "2.0", "id": 2, "method": "workspace/unknown"}),
            json!({"jsonrpc": "2.0", "id": 3, "method": "textDocument/hover", "params": {}}),
            json!({"jsonrpc": "2.0", "method": "exit"}),
        ]);
        let mut out = Vec::new();
        assert_eq!(serve(&Script::default(), input, &mut out).unwrap(), Outcome::Exit);
        let got = read_all(&out);
        assert_eq!(got[0]["result"]["serverInfo"]["name"], "lanser-mockls");
        assert!(got[0]["result"]["capabilities"].get("positionEncoding").is_none());
        assert_eq!(got[1]["error"]["code"], METHOD_NOT_FOUND);
        assert_eq!(got[2]["result"], Value::Null);
    }

    #[test]
    fn scripted_rules_and_faults() {
        let script = Script::from_json(
            r#"{"positionEncoding": "utf-8",
                "responses": [{"method": "textDocument/definition",
                               "params": {"textDocument": {"uri": "${ROOT}/a.py"}},
                               "result": [{"uri": "${ROOT}/b.py"}]}],
                "content_modified": ["textDocument/references"],
                "crash_after": 3}"#,
        )
        .unwrap();
        let input = frames(&[
            init(),
            json!({"jsonrpc": "2.0", "id": 2, "method": "textDocument/definition",
                   "params": {"textDocument": {"uri": "file:///ws/a.py"}, "position": {"line": 0, "character": 0}}}),
            json!({"jsonrpc": "2.0", "id": 3, "method": "textDocument/references", "params": {}}),
            json!({"jsonrpc": "2.0", "id": 4, "method": "textDocument/hover", "params": {}}),
        ]);
        let mut out = Vec::new();
        assert_eq!(serve(&script, input, &mut out).unwrap(), Outcome::Crash);
        let got = read_all(&out);
        assert_eq!(got[0]["result"]["capabilities"]["positionEncoding"], "utf-8");
        assert_eq!(got[1]["result"][0]["uri"], "file:///ws/b.py");
        assert_eq!(got[2]["error"]["code"], CONTENT_MODIFIED);
        assert_eq!(got.len(), 3);
    }

    #[test]
    fn delayed_request_honours_cancel() {
        let script = Script::from_json(r#"{"delay_ms": {"textDocument/hover": 60000}}"#).unwrap();
        let input = frames(&[
            init(),
            json!({"jsonrpc": "2.0", "id": 2, "method": "textDocument/hover", "params": {}}),
            json!({"jsonrpc": "2.0", "method": "$/cancelRequest", "params": {"id": 2}}),
        ]);
        let mut out = Vec::new();
        let t = Instant::now();
        assert_eq!(serve(&script, input, &mut out).unwrap(), Outcome::EndOfInput);
        assert!(t.elapsed() < Duration::from_secs(5));
        let got = read_all(&out);
        assert_eq!(got[1]["error"]["code"], REQUEST_CANCELLED);
    }

    #[test]
    fn diagnostics_follow_document_text() {
        let script = Script::from_json(
            r#"{"publish_diagnostics": true,
                "diagnostics": [{"uri": "a.py", "when_contains": "bad", "diagnostic": {"message": "m"}}]}"#,
        )
        .unwrap();
        let input = frames(&[
            init(),
            json!({"jsonrpc": "2.0", "method": "textDocument/didOpen",
                   "params": {"textDocument": {"uri": "file:///ws/a.py", "version": 1, "text": "bad"}}}),
            json!({"jsonrpc": "2.0", "method": "textDocument/didChange",
                   "params": {"textDocument": {"uri": "file:///ws/a.py", "version": 2}, "contentChanges": [{"text": "ok"}]}}),
            json!({"jsonrpc": "2.0", "id": 2, "method": "textDocument/diagnostic",
                   "params": {"textDocument": {"uri": "file:///ws/a.py"}}}),
        ]);
        let mut out = Vec::new();
        serve(&script, input, &mut out).unwrap();
        let got = read_all(&out);
        assert_eq!(got[1]["params"]["diagnostics"].as_array().unwrap().len(), 1);
        assert_eq!(got[2]["params"]["diagnostics"].as_array().unwrap().len(), 0);
        assert_eq!(got[3]["result"]["items"].as_array().unwrap().len(), 0);
    }
}
