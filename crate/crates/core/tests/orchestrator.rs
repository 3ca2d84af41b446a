mod common;

use common::{Fixture, MOCKLS};
use lanser_core::error::ErrorCode;
use lanser_core::orchestrator::{Session, SessionConfig, StartOptions};
use lanser_core::selector::IndexingMode;
use lanser_core::trace::{TraceLog, TraceWriter};
use serde_json::{json, Value};
use std::path::PathBuf;
use std::time::Duration;

struct Harness {
    fx: Fixture,
    trace: PathBuf,
}

impl Harness {
    fn new(edit: impl FnOnce(&mut Value)) -> Harness {
        let fx = Fixture::with_script(edit);
        let trace = fx.dir.path().join("trace.jsonl");
        Harness { fx, trace }
    }

    fn config(&self) -> SessionConfig {
        let mut cfg = SessionConfig::new(
            vec![
                MOCKLS.into(),
                "--script".into(),
                self.fx.script.to_str().unwrap().into(),
            ],
            &self.fx.root,
        );
        cfg.request_timeout = Duration::from_secs(10);
        cfg.restart_backoff = (Duration::from_millis(10), Duration::from_millis(40));
        cfg
    }

    fn start_with(&self, cfg: SessionConfig) -> lanser_core::error::Result<Session> {
        let opts = StartOptions {
            trace: Some(TraceWriter::create(&self.trace).unwrap()),
            ..StartOptions::default()
        };
        Session::start_process(cfg, opts)
    }

    fn start(&self) -> Session {
        self.start_with(self.config()).unwrap()
    }

    fn log(&self) -> TraceLog {
        TraceLog::read(&self.trace).unwrap()
    }
}

fn hover(s: &Session) -> lanser_core::error::Result<Value> {
    s.ensure_open("pkg/helpers.py")?;
    s.request(
        "textDocument/hover",
        json!({ "textDocument": { "uri": s.abs_uri("pkg/helpers.py") }, "position": { "line": 3, "character": 4 } }),
    )
}

fn references(s: &Session) -> lanser_core::error::Result<Value> {
    s.ensure_open("pkg/mod.py")?;
    s.request(
        "textDocument/references",
        json!({
            "textDocument": { "uri": s.abs_uri("pkg/mod.py") },
            "position": { "line": 6, "character": 19 },
            "context": { "includeDeclaration": true },
        }),
    )
}

#[test]
fn concurrent_identical_requests_share_one_call() {
    let h = Harness::new(|s| s["delay_ms"] = json!({ "textDocument/hover": 300 }));
    let session = h.start();
    let before = session.request_frames();
    let results: Vec<Value> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..8).map(|_| scope.spawn(|| hover(&session).unwrap())).collect();
        handles.into_iter().map(|t| t.join().unwrap()).collect()
    });
    assert_eq!(session.request_frames() - before, 1);
    assert!(results.windows(2).all(|w| w[0] == w[1]));
    assert_eq!(results[0]["contents"]["value"], "def normalize(value)");
    hover(&session).unwrap();
    assert_eq!(session.request_frames() - before, 1);
    session.shutdown().unwrap();
    let log = h.log();
    assert_eq!(log.events("coalesced").len(), 7);
    assert_eq!(log.events("cache_hit").len(), 1);
}

#[test]
fn slow_requests_time_out_and_are_cancelled() {
    let h = Harness::new(|s| s["delay_ms"] = json!({ "textDocument/hover": 60000 }));
    let mut cfg = h.config();
    cfg.request_timeout = Duration::from_millis(300);
    let session = h.start_with(cfg).unwrap();
    let err = hover(&session).unwrap_err();
    assert_eq!(err.code, ErrorCode::LsTimeout);
    assert_eq!(references(&session).unwrap().as_array().unwrap().len(), 5);
    session.shutdown().unwrap();
    let log = h.log();
    let cancels = log.events("cancel");
    assert_eq!(cancels.len(), 1);
    assert_eq!(cancels[0]["method"], "textDocument/hover");
    let sent = log.frames(lanser_core::trace::Direction::Send);
    assert!(sent.iter().any(|f| f["method"] == "$/cancelRequest"));
}

#[test]
fn a_crash_is_reported_once_then_the_server_restarts() {
    let h = Harness::new(|s| s["crash_after"] = json!(2));
    let session = h.start();
    hover(&session).unwrap();
    let err = references(&session).unwrap_err();
    assert_eq!(err.code, ErrorCode::LsCrash);
    assert_eq!(references(&session).unwrap().as_array().unwrap().len(), 5);
    assert_eq!(session.restart_count(), 1);
    assert_eq!(session.next_backoff(), Duration::from_millis(20));
    session.shutdown().unwrap();
    let log = h.log();
    assert_eq!(log.events("crash").len(), 1);
    assert_eq!(log.events("restart").len(), 1);
}

#[test]
fn backoff_doubles_up_to_the_cap() {
    let h = Harness::new(|s| s["crash_after"] = json!(1));
    let session = h.start();
    let mut delays = Vec::new();
    for _ in 0..4 {
        assert_eq!(hover(&session).unwrap_err().code, ErrorCode::LsCrash);
        delays.push(session.next_backoff());
    }
    let ms: Vec<u128> = delays.iter().map(Duration::as_millis).collect();
    assert_eq!(ms, [10, 20, 40, 40]);
    let _ = session.shutdown();
}

#[test]
fn encoding_is_negotiated() {
    let h = Harness::new(|s| s["positionEncoding"] = json!("utf-8"));
    let session = h.start();
    assert_eq!(session.encoding(), IndexingMode::Utf8);
    session.shutdown().unwrap();

    let h = Harness::new(|s| s["positionEncoding"] = json!("utf-32"));
    let err = h.start_with(h.config()).err().unwrap();
    assert_eq!(err.code, ErrorCode::UnsupportedCap);

    let h = Harness::new(|s| s["positionEncoding"] = json!("utf-8"));
    let mut cfg = h.config();
    cfg.preferred_encoding = vec![IndexingMode::Utf16];
    assert_eq!(h.start_with(cfg).err().unwrap().code, ErrorCode::UnsupportedCap);
}

#[test]
fn server_errors_map_to_contract_codes() {
    let h = Harness::new(|s| {
        s["content_modified"] = json!(["textDocument/references"]);
        s["responses"].as_array_mut().unwrap().insert(
            0,
            json!({ "method": "textDocument/hover", "error": { "code": -32800, "message": "cancelled" } }),
        );
    });
    let session = h.start();
    assert_eq!(references(&session).unwrap_err().code, ErrorCode::ContentModified);
    assert_eq!(hover(&session).unwrap_err().code, ErrorCode::RequestCancelled);
    session.shutdown().unwrap();
}

#[test]
fn missing_capabilities_are_visible() {
    let h = Harness::new(|s| s["capabilities"] = json!({ "hoverProvider": null }));
    let session = h.start();
    assert!(!session.has_capability("hoverProvider"));
    assert!(session.has_capability("definitionProvider"));
    session.shutdown().unwrap();
}

#[test]
fn document_sync_sends_versioned_changes() {
    let h = Harness::new(|_| {});
    let session = h.start();
    let v1 = session.ensure_open("pkg/mod.py").unwrap();
    let text = h.fx.read("pkg/mod.py").replace("normalize(item)", "canonicalize(item)");
    let v2 = session.sync_document("pkg/mod.py", &text, Some(v1)).unwrap();
    assert_eq!(v2, v1 + 1);
    assert_eq!(
        session.sync_document("pkg/mod.py", &text, Some(v1)).unwrap_err().code,
        ErrorCode::VersionSkew
    );
    session.shutdown().unwrap();
    let log = h.log();
    let sent = log.frames(lanser_core::trace::Direction::Send);
    let change = sent.iter().find(|f| f["method"] == "textDocument/didChange").unwrap();
    assert_eq!(change["params"]["textDocument"]["version"], json!(v2));
}
