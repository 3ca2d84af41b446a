//! Language-server sessions: spawn, handshake, document sync, requests with
//! timeouts and single-flight caching, and lazy restart with backoff.

mod dispatcher;
pub mod environment;
pub mod framing;
pub mod transport;

pub use dispatcher::{lsp_code, map_lsp_error, request_key, CONTENT_MODIFIED, METHOD_NOT_FOUND, REQUEST_CANCELLED};
pub use transport::{FrameSink, Inbox, Launcher, ProcessLauncher};

use crate::bundle::{EnvironmentCapture, ServerInfo};
use crate::error::{ErrorCode, LanserError, Result};
use crate::par::Execution;
use crate::selector::IndexingMode;
use crate::trace::TraceWriter;
use crate::workspace::{rel_to_uri, FileEntry, PinnedTarget, TrackingConfig, WorkspaceSnapshot};
use crossbeam_channel::Sender;
use dispatcher::{Msg, Shared};
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::Ordering;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;
use url::Url;

/// Requests whose answers depend only on the snapshot and are memoized.
pub const CACHEABLE_METHODS: [&str; 7] = [
    "textDocument/definition",
    "textDocument/references",
    "textDocument/hover",
    "textDocument/documentSymbol",
    "textDocument/prepareRename",
    "textDocument/rename",
    "textDocument/diagnostic",
];

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub server_command: Vec<String>,
    pub workspace_root: PathBuf,
    pub preferred_encoding: Vec<IndexingMode>,
    pub request_timeout: Duration,
    /// Initial and maximum restart delay.
    pub restart_backoff: (Duration, Duration),
    pub cache_capacity: usize,
    pub tracking: TrackingConfig,
    pub initialization_options: Value,
    pub execution: Execution,
}

impl SessionConfig {
    pub fn new(server_command: Vec<String>, workspace_root: impl Into<PathBuf>) -> Self {
        SessionConfig {
            server_command,
            workspace_root: workspace_root.into(),
            preferred_encoding: vec![IndexingMode::Utf16, IndexingMode::Utf8],
            request_timeout: Duration::from_secs(30),
            restart_backoff: (Duration::from_millis(200), Duration::from_secs(10)),
            cache_capacity: 1024,
            tracking: TrackingConfig::default(),
            initialization_options: Value::Null,
            execution: Execution::Auto,
        }
    }

    /// Checks the invariants and canonicalizes the workspace root.
    pub fn validated(mut self) -> Result<Self> {
        if self.server_command.is_empty() {
            return Err(LanserError::new(ErrorCode::LsCrash, "no server command configured"));
        }
        if self.request_timeout.is_zero() {
            return Err(LanserError::internal("request timeout must be positive"));
        }
        if self.preferred_encoding.is_empty() {
            return Err(LanserError::internal("preferred encoding list is empty"));
        }
        let root = std::fs::canonicalize(&self.workspace_root)
            .map_err(|e| LanserError::fs(e, format!("workspace root {}", self.workspace_root.display())))?;
        if !root.is_dir() {
            return Err(LanserError::new(
                ErrorCode::FsPermissions,
                format!("workspace root {} is not a directory", root.display()),
            ));
        }
        self.workspace_root = root;
        Ok(self)
    }
}

#[derive(Default)]
pub struct StartOptions {
    pub trace: Option<TraceWriter>,
    /// Replaces the captured environment; replay uses the recorded one.
    pub environment: Option<EnvironmentCapture>,
    /// Use this snapshot instead of walking the workspace.
    pub snapshot: Option<WorkspaceSnapshot>,
}

struct Docs {
    snapshot: WorkspaceSnapshot,
    /// Open documents and their current LSP version.
    open: BTreeMap<String, u64>,
}

struct Lifecycle {
    next_backoff: Duration,
    restarts: u32,
    /// Crashes already surfaced to a caller as `E/LS_CRASH`.
    reported_crashes: u64,
}

pub struct Session {
    config: SessionConfig,
    tx: Sender<Msg>,
    shared: Arc<Shared>,
    handle: Mutex<Option<JoinHandle<()>>>,
    encoding: IndexingMode,
    server_info: ServerInfo,
    server_capabilities: Mutex<Value>,
    environment: EnvironmentCapture,
    docs: Mutex<Docs>,
    lifecycle: Mutex<Lifecycle>,
}

fn language_id(rel: &str) -> &'static str {
    if rel.ends_with(".py") || rel.ends_with(".pyi") {
        "python"
    } else {
        "plaintext"
    }
}

struct Handshake {
    encoding: IndexingMode,
    server_info: ServerInfo,
    capabilities: Value,
}

impl Session {
    /// Spawns the configured server command as a child process.
    pub fn start_process(config: SessionConfig, opts: StartOptions) -> Result<Session> {
        let config = config.validated()?;
        let launcher = ProcessLauncher {
            argv: config.server_command.clone(),
            cwd: config.workspace_root.clone(),
        };
        Session::start(config, Box::new(launcher), opts)
    }

    pub fn start(config: SessionConfig, launcher: Box<dyn Launcher>, opts: StartOptions) -> Result<Session> {
        let config = config.validated()?;
        let config_digest = environment::config_digest(
            &config.server_command,
            &config.workspace_root,
            &config.initialization_options,
        );
        let snapshot = match opts.snapshot {
            Some(s) => s,
            None => WorkspaceSnapshot::take(
                &config.workspace_root,
                &config.tracking,
                &config_digest,
                config.execution,
            )?,
        };
        let (tx, shared, handle) = dispatcher::spawn(launcher, opts.trace, config.cache_capacity);
        let _ = tx.send(Msg::SetSnapshot(snapshot.digest()));
        let stop = |tx: &Sender<Msg>, handle: JoinHandle<()>| {
            let (rtx, rrx) = crossbeam_channel::bounded(1);
            if tx.send(Msg::Stop { reply: rtx }).is_ok() {
                let _ = rrx.recv();
            }
            let _ = handle.join();
        };
        let hs = launch(&tx).and_then(|_| handshake(&tx, &config));
        let hs = match hs {
            Ok(h) => h,
            Err(e) => {
                stop(&tx, handle);
                return Err(e);
            }
        };
        let environment = opts
            .environment
            .unwrap_or_else(|| environment::capture(hs.server_info.clone(), hs.encoding, &config_digest));
        let root_uri = Url::from_directory_path(&config.workspace_root)
            .map(String::from)
            .unwrap_or_default();
        let _ = tx.send(Msg::TraceHeader(json!({
            "environment": environment,
            "workspace_digest": snapshot.digest(),
            "root": root_uri,
            "server_command": config.server_command,
        })));
        let initial = config.restart_backoff.0;
        Ok(Session {
            config,
            tx,
            shared,
            handle: Mutex::new(Some(handle)),
            encoding: hs.encoding,
            server_info: hs.server_info,
            server_capabilities: Mutex::new(hs.capabilities),
            environment,
            docs: Mutex::new(Docs {
                snapshot,
                open: BTreeMap::new(),
            }),
            lifecycle: Mutex::new(Lifecycle {
                next_backoff: initial,
                restarts: 0,
                reported_crashes: 0,
            }),
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn encoding(&self) -> IndexingMode {
        self.encoding
    }

    pub fn server_info(&self) -> &ServerInfo {
        &self.server_info
    }

    pub fn environment(&self) -> &EnvironmentCapture {
        &self.environment
    }

    pub fn server_capabilities(&self) -> Value {
        self.server_capabilities.lock().unwrap().clone()
    }

    /// Whether the server advertised `name` (present and not `false`).
    pub fn has_capability(&self, name: &str) -> bool {
        !matches!(
            self.server_capabilities.lock().unwrap().get(name),
            None | Some(Value::Bool(false)) | Some(Value::Null)
        )
    }

    pub fn snapshot(&self) -> WorkspaceSnapshot {
        self.docs.lock().unwrap().snapshot.clone()
    }

    pub fn restart_count(&self) -> u32 {
        self.lifecycle.lock().unwrap().restarts
    }

    /// Delay before the next restart attempt.
    pub fn next_backoff(&self) -> Duration {
        self.lifecycle.lock().unwrap().next_backoff
    }

    /// JSON-RPC requests written to the wire so far.
    pub fn request_frames(&self) -> u64 {
        self.shared.request_frames.load(Ordering::SeqCst)
    }

    pub fn is_live(&self) -> bool {
        !self.shared.dead.load(Ordering::SeqCst)
    }

    pub fn trace_error(&self) -> Option<String> {
        self.shared.trace_error.lock().unwrap().clone()
    }

    pub fn abs_uri(&self, rel: &str) -> String {
        Url::from_file_path(self.config.workspace_root.join(rel))
            .map(String::from)
            .unwrap_or_else(|_| rel.to_string())
    }

    /// Workspace-relative path of a `file://` URI inside the root.
    pub fn rel_of(&self, uri: &str) -> Option<String> {
        let path = Url::parse(uri).ok()?.to_file_path().ok()?;
        let rel = path.strip_prefix(&self.config.workspace_root).ok()?;
        Some(rel_to_uri(rel))
    }

    pub fn event(&self, name: &str, data: Value) {
        let _ = self.tx.send(Msg::Event {
            name: name.to_string(),
            data,
        });
    }

    /// Restarts a dead server. A crash no caller has seen yet is reported
    /// as `E/LS_CRASH` after the restart.
    fn ensure_live(&self) -> Result<()> {
        if self.is_live() {
            return Ok(());
        }
        let mut life = self.lifecycle.lock().unwrap();
        if self.is_live() {
            return Ok(());
        }
        let crashes = self.shared.crashes.load(Ordering::SeqCst);
        let unreported = crashes > life.reported_crashes;
        life.reported_crashes = crashes;
        let delay = life.next_backoff;
        std::thread::sleep(delay);
        life.next_backoff = (delay * 2).min(self.config.restart_backoff.1);
        life.restarts += 1;
        self.event(
            "restart",
            json!({ "attempt": life.restarts, "delay_ms": delay.as_millis() as u64 }),
        );
        launch(&self.tx)?;
        let hs = handshake(&self.tx, &self.config)?;
        if hs.encoding != self.encoding {
            return Err(LanserError::new(
                ErrorCode::UnsupportedCap,
                format!(
                    "restarted server negotiated {} instead of {}",
                    hs.encoding, self.encoding
                ),
            ));
        }
        *self.server_capabilities.lock().unwrap() = hs.capabilities;
        let docs = self.docs.lock().unwrap();
        for (rel, version) in &docs.open {
            let text = docs.snapshot.get(rel).and_then(|f| f.text()).unwrap_or("");
            notify_raw(
                &self.tx,
                "textDocument/didOpen",
                self.did_open_params(rel, *version, text),
            )?;
        }
        if unreported {
            return Err(LanserError::new(
                ErrorCode::LsCrash,
                format!("server had exited; restarted after {} ms", delay.as_millis()),
            ));
        }
        Ok(())
    }

    fn note_crash(&self, r: &Result<impl Sized>) {
        if matches!(r, Err(e) if e.code == ErrorCode::LsCrash) {
            let crashes = self.shared.crashes.load(Ordering::SeqCst);
            let mut life = self.lifecycle.lock().unwrap();
            life.reported_crashes = life.reported_crashes.max(crashes);
        }
    }

    fn did_open_params(&self, rel: &str, version: u64, text: &str) -> Value {
        json!({ "textDocument": {
            "uri": self.abs_uri(rel),
            "languageId": language_id(rel),
            "version": version,
            "text": text,
        }})
    }

    /// Sends a request, restarting a dead server first.
    pub fn request(&self, method: &str, params: Value) -> Result<Value> {
        self.ensure_live()?;
        let r = request_raw(
            &self.tx,
            method,
            params,
            CACHEABLE_METHODS.contains(&method),
            self.config.request_timeout,
        );
        self.note_crash(&r);
        r
    }

    pub fn notify(&self, method: &str, params: Value) -> Result<()> {
        self.ensure_live()?;
        let r = notify_raw(&self.tx, method, params);
        self.note_crash(&r);
        r
    }

    /// Opens `rel` with its snapshot text unless already open. Returns the
    /// document's LSP version.
    pub fn ensure_open(&self, rel: &str) -> Result<u64> {
        self.ensure_live()?;
        let mut docs = self.docs.lock().unwrap();
        if let Some(v) = docs.open.get(rel) {
            return Ok(*v);
        }
        let entry = docs
            .snapshot
            .get(rel)
            .cloned()
            .ok_or_else(|| LanserError::new(ErrorCode::NotFound, format!("{rel} is not a tracked file")))?;
        let text = entry.text().unwrap_or("");
        notify_raw(&self.tx, "textDocument/didOpen", self.did_open_params(rel, 1, text))?;
        docs.open.insert(rel.to_string(), 1);
        Ok(1)
    }

    /// Pushes new content for `rel` to the server and the snapshot. Returns
    /// the new document version. `expected` is the caller's view of the
    /// current version.
    pub fn sync_document(&self, rel: &str, text: &str, expected: Option<u64>) -> Result<u64> {
        if rel.starts_with('/') || rel.split('/').any(|c| c == "..") {
            return Err(LanserError::new(
                ErrorCode::FsPermissions,
                format!("{rel} is outside the workspace root"),
            ));
        }
        self.ensure_live()?;
        let mut docs = self.docs.lock().unwrap();
        let current = docs.open.get(rel).copied();
        if let Some(want) = expected {
            if current.unwrap_or(0) != want {
                return Err(LanserError::new(
                    ErrorCode::VersionSkew,
                    format!(
                        "{rel}: expected version {want}, document is at {}",
                        current.unwrap_or(0)
                    ),
                )
                .with_details(json!({ "expected": want, "actual": current.unwrap_or(0) })));
            }
        }
        let version = match current {
            None => {
                notify_raw(&self.tx, "textDocument/didOpen", self.did_open_params(rel, 1, text))?;
                1
            }
            Some(v) => {
                let params = json!({
                    "textDocument": { "uri": self.abs_uri(rel), "version": v + 1 },
                    "contentChanges": [{ "text": text }],
                });
                notify_raw(&self.tx, "textDocument/didChange", params)?;
                v + 1
            }
        };
        docs.open.insert(rel.to_string(), version);
        docs.snapshot = docs.snapshot.with_file(rel, FileEntry::from_text(text, version));
        let _ = self.tx.send(Msg::SetSnapshot(docs.snapshot.digest()));
        Ok(version)
    }

    /// Re-reads the workspace from disk, keeping open-document versions.
    pub fn refresh_snapshot(&self) -> Result<WorkspaceSnapshot> {
        let mut docs = self.docs.lock().unwrap();
        let cfg = docs.snapshot.config_digest.clone();
        let mut fresh = WorkspaceSnapshot::take(
            &self.config.workspace_root,
            &self.config.tracking,
            &cfg,
            self.config.execution,
        )?;
        fresh.pins = docs.snapshot.pins.clone();
        for (rel, v) in &docs.open {
            if let Some(f) = fresh.get(rel).cloned() {
                let text = f.text().unwrap_or("").to_string();
                fresh = fresh.with_file(rel, FileEntry::from_text(&text, *v));
            }
        }
        docs.snapshot = fresh.clone();
        let _ = self.tx.send(Msg::SetSnapshot(fresh.digest()));
        Ok(fresh)
    }

    /// Remembers a resolution for `(selector, docVersion)`.
    pub fn pin(&self, selector: &str, doc_version: &str, target: PinnedTarget) {
        let mut docs = self.docs.lock().unwrap();
        docs.snapshot
            .pins
            .insert((selector.to_string(), doc_version.to_string()), target);
    }

    /// Most recent diagnostics the server pushed for `rel`.
    pub fn published_diagnostics(&self, rel: &str) -> Option<Vec<Value>> {
        self.shared.published.lock().unwrap().get(&self.abs_uri(rel)).cloned()
    }

    /// Graceful `shutdown`/`exit`, then stops the dispatcher and finishes
    /// the trace.
    pub fn shutdown(self) -> Result<()> {
        if self.is_live() {
            let _ = request_raw(&self.tx, "shutdown", Value::Null, false, self.config.request_timeout);
            let _ = notify_raw(&self.tx, "exit", Value::Null);
        }
        self.stop();
        match self.trace_error() {
            Some(e) => Err(LanserError::new(ErrorCode::FsPermissions, e)),
            None => Ok(()),
        }
    }

    fn stop(&self) {
        let Some(handle) = self.handle.lock().unwrap().take() else {
            return;
        };
        let (rtx, rrx) = crossbeam_channel::bounded(1);
        if self.tx.send(Msg::Stop { reply: rtx }).is_ok() {
            let _ = rrx.recv();
        }
        let _ = handle.join();
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        self.stop();
    }
}

fn launch(tx: &Sender<Msg>) -> Result<()> {
    let (rtx, rrx) = crossbeam_channel::bounded(1);
    tx.send(Msg::Launch { reply: rtx })
        .map_err(|_| LanserError::internal("dispatcher stopped"))?;
    rrx.recv().map_err(|_| LanserError::internal("dispatcher stopped"))?
}

fn request_raw(tx: &Sender<Msg>, method: &str, params: Value, cacheable: bool, timeout: Duration) -> Result<Value> {
    let (rtx, rrx) = crossbeam_channel::bounded(1);
    tx.send(Msg::Request {
        method: method.to_string(),
        params,
        cacheable,
        timeout,
        reply: rtx,
    })
    .map_err(|_| LanserError::internal("dispatcher stopped"))?;
    rrx.recv().map_err(|_| LanserError::internal("dispatcher stopped"))?
}

fn notify_raw(tx: &Sender<Msg>, method: &str, params: Value) -> Result<()> {
    let (rtx, rrx) = crossbeam_channel::bounded(1);
    tx.send(Msg::Notify {
        method: method.to_string(),
        params,
        reply: rtx,
    })
    .map_err(|_| LanserError::internal("dispatcher stopped"))?;
    rrx.recv().map_err(|_| LanserError::internal("dispatcher stopped"))?
}

fn handshake(tx: &Sender<Msg>, config: &SessionConfig) -> Result<Handshake> {
    let root_uri = Url::from_directory_path(&config.workspace_root)
        .map(String::from)
        .map_err(|_| LanserError::internal("workspace root is not an absolute path"))?;
    let name = config
        .workspace_root
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let encodings: Vec<&str> = config.preferred_encoding.iter().map(|e| e.as_str()).collect();
    let mut params = json!({
        "processId": null,
        "clientInfo": { "name": "lanser", "version": env!("CARGO_PKG_VERSION") },
        "rootUri": root_uri,
        "workspaceFolders": [{ "uri": root_uri, "name": name }],
        "capabilities": {
            "general": { "positionEncodings": encodings },
            "textDocument": {
                "synchronization": { "dynamicRegistration": false, "didSave": false },
                "definition": { "linkSupport": false },
                "references": {},
                "hover": { "contentFormat": ["markdown", "plaintext"] },
                "documentSymbol": { "hierarchicalDocumentSymbolSupport": true },
                "rename": { "prepareSupport": true },
                "diagnostic": {},
                "publishDiagnostics": {},
            },
            "workspace": { "workspaceFolders": true, "configuration": true, "workspaceEdit": { "documentChanges": true } },
        },
    });
    if !config.initialization_options.is_null() {
        params["initializationOptions"] = config.initialization_options.clone();
    }
    let result = request_raw(tx, "initialize", params, false, config.request_timeout)?;
    let capabilities = result.get("capabilities").cloned().unwrap_or_else(|| json!({}));
    let offered = capabilities
        .get("positionEncoding")
        .and_then(Value::as_str)
        .unwrap_or("utf-16");
    let encoding = config
        .preferred_encoding
        .iter()
        .copied()
        .find(|e| e.as_str() == offered)
        .ok_or_else(|| {
            LanserError::new(
                ErrorCode::UnsupportedCap,
                format!("server chose position encoding '{offered}', which is not acceptable"),
            )
            .with_details(json!({ "offered": offered, "accepted": encodings }))
        })?;
    let server_info = match result.get("serverInfo") {
        Some(info) if info.get("name").is_some() => ServerInfo {
            name: info["name"].as_str().unwrap_or_default().to_string(),
            version: info.get("version").and_then(Value::as_str).map(str::to_string),
        },
        _ => ServerInfo {
            name: std::path::Path::new(&config.server_command[0])
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            version: None,
        },
    };
    notify_raw(tx, "initialized", json!({}))?;
    Ok(Handshake {
        encoding,
        server_info,
        capabilities,
    })
}
