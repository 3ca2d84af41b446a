//! The dispatcher thread owns the wire. Every outgoing frame, incoming frame
//! and orchestrator event passes through its inbox, so the trace order is
//! the wire order.

use super::transport::{FrameSink, Inbox, Launcher};
use crate::error::{ErrorCode, LanserError};
use crate::jcs;
use crate::trace::{Direction, TraceWriter};
use crossbeam_channel::{Receiver, RecvTimeoutError, Sender};
use serde_json::{json, Value};
use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

pub const REQUEST_CANCELLED: i64 = -32800;
pub const CONTENT_MODIFIED: i64 = -32801;
pub const METHOD_NOT_FOUND: i64 = -32601;

type Reply = Sender<Result<Value, LanserError>>;

pub(crate) enum Msg {
    Request {
        method: String,
        params: Value,
        cacheable: bool,
        timeout: Duration,
        reply: Reply,
    },
    Notify {
        method: String,
        params: Value,
        reply: Sender<Result<(), LanserError>>,
    },
    Incoming {
        generation: u64,
        frame: Value,
    },
    Closed {
        generation: u64,
        reason: String,
    },
    Launch {
        reply: Sender<Result<(), LanserError>>,
    },
    SetSnapshot(String),
    Event {
        name: String,
        data: Value,
    },
    TraceHeader(Value),
    Stop {
        reply: Sender<()>,
    },
}

/// State the session reads without a round trip through the inbox.
#[derive(Default)]
pub(crate) struct Shared {
    pub dead: AtomicBool,
    /// Latest `publishDiagnostics` payload per document uri.
    pub published: Mutex<BTreeMap<String, Vec<Value>>>,
    pub trace_error: Mutex<Option<String>>,
    pub request_frames: AtomicU64,
    /// Server exits observed so far.
    pub crashes: AtomicU64,
}

struct Pending {
    method: String,
    key: Option<String>,
    waiters: Vec<Reply>,
    deadline: Instant,
}

struct Dispatcher {
    tx: Sender<Msg>,
    launcher: Box<dyn Launcher>,
    wire: Option<Box<dyn FrameSink>>,
    generation: u64,
    next_id: i64,
    pending: BTreeMap<i64, Pending>,
    inflight: HashMap<String, i64>,
    cache: HashMap<String, Value>,
    cache_order: VecDeque<String>,
    cache_capacity: usize,
    snapshot: String,
    trace: Option<TraceWriter>,
    shared: Arc<Shared>,
}

pub(crate) fn spawn(
    launcher: Box<dyn Launcher>,
    trace: Option<TraceWriter>,
    cache_capacity: usize,
) -> (Sender<Msg>, Arc<Shared>, JoinHandle<()>) {
    let (tx, rx) = crossbeam_channel::unbounded();
    let shared = Arc::new(Shared::default());
    shared.dead.store(true, Ordering::SeqCst);
    let d = Dispatcher {
        tx: tx.clone(),
        launcher,
        wire: None,
        generation: 0,
        next_id: 1,
        pending: BTreeMap::new(),
        inflight: HashMap::new(),
        cache: HashMap::new(),
        cache_order: VecDeque::new(),
        cache_capacity,
        snapshot: String::new(),
        trace,
        shared: shared.clone(),
    };
    let handle = std::thread::Builder::new()
        .name("lanser-dispatcher".into())
        .spawn(move || d.run(rx))
        .expect("spawn dispatcher thread");
    (tx, shared, handle)
}

/// Cache and coalescing key: `sha256(method, canonical params, snapshot)`.
pub fn request_key(method: &str, params: &Value, snapshot_digest: &str) -> String {
    jcs::sha256_of(&json!([method, params, snapshot_digest])).expect("params come from serde_json")
}

/// Maps a JSON-RPC error object onto the error taxonomy. Codes without a
/// dedicated symbol keep the server's code under `details.lsp_code`.
pub fn map_lsp_error(method: &str, err: &Value) -> LanserError {
    let code = err.get("code").and_then(Value::as_i64).unwrap_or(0);
    let message = err.get("message").and_then(Value::as_str).unwrap_or("").to_string();
    let details = json!({ "lsp_code": code, "message": message });
    let lanser = match code {
        REQUEST_CANCELLED => ErrorCode::RequestCancelled,
        CONTENT_MODIFIED => ErrorCode::ContentModified,
        METHOD_NOT_FOUND => ErrorCode::UnsupportedCap,
        _ => ErrorCode::Internal,
    };
    LanserError::new(lanser, format!("{method}: server error {code}: {message}")).with_details(details)
}

pub fn lsp_code(e: &LanserError) -> Option<i64> {
    e.details.as_ref()?.get("lsp_code")?.as_i64()
}

impl Dispatcher {
    fn run(mut self, rx: Receiver<Msg>) {
        loop {
            let wait = self
                .pending
                .values()
                .map(|p| p.deadline)
                .min()
                .map_or(Duration::from_secs(3600), |d| {
                    d.saturating_duration_since(Instant::now())
                });
            match rx.recv_timeout(wait) {
                Ok(Msg::Stop { reply }) => {
                    self.close_wire();
                    self.fail_all(ErrorCode::LsCrash, "session stopped");
                    if let Some(t) = self.trace.as_mut() {
                        t.finish();
                    }
                    self.check_trace();
                    let _ = reply.send(());
                    return;
                }
                Ok(msg) => self.handle(msg),
                Err(RecvTimeoutError::Timeout) => self.expire(),
                Err(RecvTimeoutError::Disconnected) => return,
            }
            self.check_trace();
        }
    }

    fn check_trace(&self) {
        if let Some(e) = self.trace.as_ref().and_then(|t| t.error()) {
            let mut slot = self.shared.trace_error.lock().unwrap();
            if slot.is_none() {
                *slot = Some(e.to_string());
            }
        }
    }

    fn event(&mut self, name: &str, data: Value) {
        if let Some(t) = self.trace.as_mut() {
            t.event(name, data);
        }
    }

    fn send(&mut self, frame: Value) -> Result<(), LanserError> {
        if let Some(t) = self.trace.as_mut() {
            t.frame(Direction::Send, &frame);
        }
        let result = match self.wire.as_mut() {
            Some(w) => w.send(&frame),
            None => return Err(LanserError::new(ErrorCode::LsCrash, "server is not running")),
        };
        result.map_err(|e| {
            let msg = format!("writing to server: {e}");
            self.on_closed(msg.clone());
            LanserError::new(ErrorCode::LsCrash, msg)
        })
    }

    fn handle(&mut self, msg: Msg) {
        match msg {
            Msg::Request {
                method,
                params,
                cacheable,
                timeout,
                reply,
            } => self.request(method, params, cacheable, timeout, reply),
            Msg::Notify { method, params, reply } => {
                let exiting = method == "exit";
                let mut frame = json!({ "jsonrpc": "2.0", "method": method });
                if !params.is_null() {
                    frame["params"] = params;
                }
                let _ = reply.send(self.send(frame));
                if exiting {
                    self.close_wire();
                    self.shared.dead.store(true, Ordering::SeqCst);
                }
            }
            Msg::Incoming { generation, frame } if generation == self.generation => self.incoming(frame),
            Msg::Incoming { .. } => {}
            Msg::Closed { generation, reason } if generation == self.generation => self.on_closed(reason),
            Msg::Closed { .. } => {}
            Msg::Launch { reply } => {
                self.close_wire();
                self.generation += 1;
                let inbox = Inbox {
                    tx: self.tx.clone(),
                    generation: self.generation,
                };
                let result = self.launcher.launch(inbox).map(|w| {
                    self.wire = Some(w);
                    self.shared.dead.store(false, Ordering::SeqCst);
                });
                let _ = reply.send(result);
            }
            Msg::SetSnapshot(digest) => self.snapshot = digest,
            Msg::Event { name, data } => self.event(&name, data),
            Msg::TraceHeader(h) => {
                if let Some(t) = self.trace.as_mut() {
                    t.header(h);
                }
            }
            Msg::Stop { .. } => unreachable!("handled in run"),
        }
    }

    fn request(&mut self, method: String, params: Value, cacheable: bool, timeout: Duration, reply: Reply) {
        if self.wire.is_none() {
            let _ = reply.send(Err(LanserError::new(ErrorCode::LsCrash, "server is not running")));
            return;
        }
        let key = cacheable.then(|| request_key(&method, &params, &self.snapshot));
        if let Some(k) = &key {
            if let Some(v) = self.cache.get(k).cloned() {
                self.event("cache_hit", json!({ "method": method, "key": k }));
                let _ = reply.send(Ok(v));
                return;
            }
            if let Some(&id) = self.inflight.get(k) {
                self.event("coalesced", json!({ "method": method, "key": k, "id": id }));
                if let Some(p) = self.pending.get_mut(&id) {
                    p.waiters.push(reply);
                }
                return;
            }
            self.event("cache_miss", json!({ "method": method, "key": k }));
        }
        let id = self.next_id;
        self.next_id += 1;
        let mut frame = json!({ "jsonrpc": "2.0", "id": id, "method": method });
        if !params.is_null() {
            frame["params"] = params;
        }
        if let Err(e) = self.send(frame) {
            let _ = reply.send(Err(e));
            return;
        }
        self.shared.request_frames.fetch_add(1, Ordering::SeqCst);
        if let Some(k) = &key {
            self.inflight.insert(k.clone(), id);
        }
        self.pending.insert(
            id,
            Pending {
                method,
                key,
                waiters: vec![reply],
                deadline: Instant::now() + timeout,
            },
        );
    }

    fn incoming(&mut self, frame: Value) {
        if let Some(t) = self.trace.as_mut() {
            t.frame(Direction::Recv, &frame);
        }
        let method = frame.get("method").and_then(Value::as_str).map(str::to_string);
        let id = frame.get("id").cloned();
        match (method, id) {
            (None, Some(id)) => {
                let Some(p) = id.as_i64().and_then(|id| self.pending.remove(&id)) else {
                    return; // late answer to a cancelled request
                };
                if let Some(k) = &p.key {
                    self.inflight.remove(k);
                }
                let result = match frame.get("error") {
                    Some(err) if !err.is_null() => Err(map_lsp_error(&p.method, err)),
                    _ => Ok(frame.get("result").cloned().unwrap_or(Value::Null)),
                };
                if let (Ok(v), Some(k)) = (&result, &p.key) {
                    self.remember(k.clone(), v.clone());
                }
                for w in p.waiters {
                    let _ = w.send(result.clone());
                }
            }
            (Some(m), Some(id)) => {
                // server-to-client request: answer neutrally
                let result = if m == "workspace/configuration" {
                    let n = frame
                        .pointer("/params/items")
                        .and_then(Value::as_array)
                        .map_or(0, Vec::len);
                    Value::Array(vec![Value::Null; n])
                } else {
                    Value::Null
                };
                let _ = self.send(json!({ "jsonrpc": "2.0", "id": id, "result": result }));
            }
            (Some(m), None) => {
                if m == "textDocument/publishDiagnostics" {
                    if let Some(uri) = frame.pointer("/params/uri").and_then(Value::as_str) {
                        let diags = frame
                            .pointer("/params/diagnostics")
                            .and_then(Value::as_array)
                            .cloned()
                            .unwrap_or_default();
                        self.shared.published.lock().unwrap().insert(uri.to_string(), diags);
                    }
                }
            }
            (None, None) => {}
        }
    }

    fn remember(&mut self, key: String, value: Value) {
        if self.cache_capacity == 0 {
            return;
        }
        if self.cache.insert(key.clone(), value).is_none() {
            self.cache_order.push_back(key);
        }
        while self.cache.len() > self.cache_capacity {
            if let Some(old) = self.cache_order.pop_front() {
                self.cache.remove(&old);
            }
        }
    }

    fn expire(&mut self) {
        let now = Instant::now();
        let due: Vec<i64> = self
            .pending
            .iter()
            .filter(|(_, p)| p.deadline <= now)
            .map(|(id, _)| *id)
            .collect();
        for id in due {
            let Some(p) = self.pending.remove(&id) else { continue };
            if let Some(k) = &p.key {
                self.inflight.remove(k);
            }
            let _ = self.send(json!({ "jsonrpc": "2.0", "method": "$/cancelRequest", "params": { "id": id } }));
            self.event("cancel", json!({ "id": id, "method": p.method, "reason": "timeout" }));
            let err = LanserError::new(
                ErrorCode::LsTimeout,
                format!("{} timed out; sent $/cancelRequest", p.method),
            );
            for w in p.waiters {
                let _ = w.send(Err(err.clone()));
            }
        }
    }

    fn close_wire(&mut self) {
        if let Some(mut w) = self.wire.take() {
            w.close();
        }
    }

    fn on_closed(&mut self, reason: String) {
        if self.wire.is_none() {
            return;
        }
        self.close_wire();
        self.shared.crashes.fetch_add(1, Ordering::SeqCst);
        self.shared.dead.store(true, Ordering::SeqCst);
        self.event("crash", json!({ "reason": reason }));
        self.fail_all(ErrorCode::LsCrash, &format!("server exited: {reason}"));
    }

    fn fail_all(&mut self, code: ErrorCode, message: &str) {
        self.inflight.clear();
        for (_, p) in std::mem::take(&mut self.pending) {
            let err = LanserError::new(code, format!("{}: {message}", p.method));
            for w in p.waiters {
                let _ = w.send(Err(err.clone()));
            }
        }
    }
}
