//! JSONL session traces: a header line, then one entry per wire frame or
//! orchestrator event in wire order, closed by an `end` event.
//!
//! Replay feeds recorded server frames back through a [`ReplayLauncher`]
//! that also checks every frame the client sends against the recording.

use crate::bundle::EnvironmentCapture;
use crate::error::{ErrorCode, LanserError};
use crate::jcs;
use crate::orchestrator::transport::{FrameSink, Inbox, Launcher};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

pub const TRACE_VERSION: &str = "lanser-trace-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Send,
    Recv,
}

pub fn frame_digest(frame: &Value) -> String {
    jcs::sha256_of(frame).expect("frames come from serde_json")
}

pub struct TraceWriter {
    out: Box<dyn Write + Send>,
    seq: u64,
    header_written: bool,
    pending: Vec<Value>,
    error: Option<String>,
}

impl TraceWriter {
    pub fn create(path: &Path) -> Result<Self, LanserError> {
        let f =
            File::create(path).map_err(|e| LanserError::fs(e, format!("creating trace file {}", path.display())))?;
        Ok(TraceWriter::to_writer(Box::new(BufWriter::new(f))))
    }

    pub fn to_writer(out: Box<dyn Write + Send>) -> Self {
        TraceWriter {
            out,
            seq: 0,
            header_written: false,
            pending: Vec::new(),
            error: None,
        }
    }

    pub fn error(&self) -> Option<&str> {
        self.error.as_deref()
    }

    fn line(&mut self, v: &Value) {
        if self.error.is_some() {
            return;
        }
        let r: io::Result<()> = (|| {
            serde_json::to_writer(&mut self.out, v)?;
            self.out.write_all(b"\n")?;
            self.out.flush()
        })();
        if let Err(e) = r {
            self.error = Some(format!("writing trace: {e}"));
        }
    }

    fn append(&mut self, mut entry: Value) {
        self.seq += 1;
        entry["seq"] = json!(self.seq);
        if self.header_written {
            self.line(&entry);
        } else {
            self.pending.push(entry);
        }
    }

    pub fn frame(&mut self, direction: Direction, frame: &Value) {
        self.append(json!({
            "direction": direction,
            "frame": frame,
            "frame_digest": frame_digest(frame),
        }));
    }

    pub fn event(&mut self, name: &str, data: Value) {
        self.append(json!({ "event": name, "data": data }));
    }

    /// Writes the header, then every entry buffered before it.
    pub fn header(&mut self, mut header: Value) {
        if self.header_written {
            return;
        }
        header["trace_version"] = json!(TRACE_VERSION);
        self.line(&header);
        self.header_written = true;
        for e in std::mem::take(&mut self.pending) {
            self.line(&e);
        }
    }

    pub fn finish(&mut self) {
        if !self.header_written {
            self.header(json!({ "environment": null, "workspace_digest": null }));
        }
        let n = self.seq;
        self.event("end", json!({ "entries": n }));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub trace_version: String,
    pub environment: Option<EnvironmentCapture>,
    pub workspace_digest: Option<String>,
    #[serde(default)]
    pub root: Option<String>,
    #[serde(default)]
    pub server_command: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TraceEntry {
    Frame {
        seq: u64,
        direction: Direction,
        frame: Value,
    },
    Event {
        seq: u64,
        name: String,
        data: Value,
    },
}

#[derive(Debug, Clone)]
pub struct TraceLog {
    pub header: TraceHeader,
    pub entries: Vec<TraceEntry>,
}

fn mismatch(msg: impl Into<String>) -> LanserError {
    LanserError::new(ErrorCode::ReplayMismatch, msg)
}

impl TraceLog {
    pub fn read(path: &Path) -> Result<TraceLog, LanserError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LanserError::fs(e, format!("reading trace {}", path.display())))?;
        TraceLog::parse(&text)
    }

    /// Parses and integrity-checks a trace: header, contiguous sequence
    /// numbers, frame digests and the end marker.
    pub fn parse(text: &str) -> Result<TraceLog, LanserError> {
        let mut lines = text.split_terminator('\n');
        let head = lines.next().ok_or_else(|| mismatch("empty trace"))?;
        let header: TraceHeader =
            serde_json::from_str(head).map_err(|e| mismatch(format!("malformed trace header: {e}")))?;
        if header.trace_version != TRACE_VERSION {
            return Err(mismatch(format!(
                "unsupported trace version '{}'",
                header.trace_version
            )));
        }
        let mut entries = Vec::new();
        let mut ended = false;
        for (i, line) in lines.enumerate() {
            let want = i as u64 + 1;
            if ended {
                return Err(mismatch(format!("entry after end marker at seq {want}")));
            }
            let v: Value = serde_json::from_str(line)
                .map_err(|e| mismatch(format!("malformed trace entry at seq {want}: {e}")))?;
            let seq = v.get("seq").and_then(Value::as_u64);
            if seq != Some(want) {
                return Err(mismatch(format!("sequence break at seq {want}: found {seq:?}")));
            }
            if let Some(dir) = v.get("direction") {
                let direction: Direction = serde_json::from_value(dir.clone())
                    .map_err(|_| mismatch(format!("bad direction at seq {want}")))?;
                let frame = v.get("frame").cloned().unwrap_or(Value::Null);
                if v.get("frame_digest").and_then(Value::as_str) != Some(frame_digest(&frame).as_str()) {
                    return Err(mismatch(format!("frame digest mismatch at seq {want}")));
                }
                entries.push(TraceEntry::Frame {
                    seq: want,
                    direction,
                    frame,
                });
            } else if let Some(name) = v.get("event").and_then(Value::as_str) {
                if name == "end" {
                    if v.pointer("/data/entries").and_then(Value::as_u64) != Some(want - 1) {
                        return Err(mismatch(format!("end marker count disagrees at seq {want}")));
                    }
                    ended = true;
                }
                entries.push(TraceEntry::Event {
                    seq: want,
                    name: name.to_string(),
                    data: v.get("data").cloned().unwrap_or(Value::Null),
                });
            } else {
                return Err(mismatch(format!("unrecognised trace entry at seq {want}")));
            }
        }
        if !ended {
            let last = entries.len();
            return Err(mismatch(format!("trace truncated after seq {last}: no end marker")));
        }
        Ok(TraceLog { header, entries })
    }

    /// Payloads of all events named `name`, in order.
    pub fn events(&self, name: &str) -> Vec<&Value> {
        self.entries
            .iter()
            .filter_map(|e| match e {
                TraceEntry::Event { name: n, data, .. } if n == name => Some(data),
                _ => None,
            })
            .collect()
    }

    pub fn frames(&self, direction: Direction) -> Vec<&Value> {
        self.entries
            .iter()
            .filter_map(|e| match e {
                TraceEntry::Frame {
                    direction: d, frame, ..
                } if *d == direction => Some(frame),
                _ => None,
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// replay transport

enum Step {
    Send(Value),
    Recv(Value),
    /// Server exit, with the recorded reason.
    Crash(String),
}

struct Script {
    steps: Vec<Step>,
    pos: usize,
    inbox: Option<Inbox>,
    mismatch: Option<String>,
}

impl Script {
    fn deliver(&mut self) {
        while let Some(step) = self.steps.get(self.pos) {
            match step {
                Step::Send(_) => return,
                Step::Recv(v) => {
                    if let Some(i) = &self.inbox {
                        i.frame(v.clone());
                    }
                }
                Step::Crash(reason) => {
                    let reason = reason.clone();
                    self.pos += 1;
                    if let Some(i) = &self.inbox {
                        i.closed(&reason);
                    }
                    return;
                }
            }
            self.pos += 1;
        }
    }
}

/// Serves recorded server frames and verifies client frames against the
/// recording instead of talking to a live server.
#[derive(Clone)]
pub struct ReplayLauncher {
    script: Arc<Mutex<Script>>,
}

impl ReplayLauncher {
    pub fn new(log: &TraceLog) -> Self {
        let steps = log
            .entries
            .iter()
            .filter_map(|e| match e {
                TraceEntry::Frame {
                    direction: Direction::Send,
                    frame,
                    ..
                } => Some(Step::Send(frame.clone())),
                TraceEntry::Frame {
                    direction: Direction::Recv,
                    frame,
                    ..
                } => Some(Step::Recv(frame.clone())),
                TraceEntry::Event { name, data, .. } if name == "crash" => Some(Step::Crash(
                    data.get("reason")
                        .and_then(Value::as_str)
                        .unwrap_or("server exited")
                        .to_string(),
                )),
                _ => None,
            })
            .collect();
        ReplayLauncher {
            script: Arc::new(Mutex::new(Script {
                steps,
                pos: 0,
                inbox: None,
                mismatch: None,
            })),
        }
    }

    /// First divergence between the replayed client and the recording.
    pub fn mismatch(&self) -> Option<String> {
        self.script.lock().unwrap().mismatch.clone()
    }
}

struct ReplaySink {
    script: Arc<Mutex<Script>>,
}

impl FrameSink for ReplaySink {
    fn send(&mut self, frame: &Value) -> io::Result<()> {
        let mut s = self.script.lock().unwrap();
        let pos = s.pos;
        let ok =
            matches!(s.steps.get(pos), Some(Step::Send(expected)) if frame_digest(expected) == frame_digest(frame));
        if !ok {
            let what = frame.get("method").and_then(Value::as_str).unwrap_or("response");
            let msg = match s.steps.get(pos) {
                None => format!("client sent {what} after the recording ended"),
                Some(_) => format!("client frame {what} diverges from the recording at step {}", pos + 1),
            };
            if s.mismatch.is_none() {
                s.mismatch = Some(msg.clone());
            }
            return Err(io::Error::new(io::ErrorKind::InvalidData, msg));
        }
        s.pos += 1;
        s.deliver();
        Ok(())
    }
}

impl Launcher for ReplayLauncher {
    fn launch(&mut self, inbox: Inbox) -> Result<Box<dyn FrameSink>, LanserError> {
        let mut s = self.script.lock().unwrap();
        s.inbox = Some(inbox);
        s.deliver();
        Ok(Box::new(ReplaySink {
            script: self.script.clone(),
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Shared(Arc<Mutex<Vec<u8>>>);
    impl Write for Shared {
        fn write(&mut self, b: &[u8]) -> io::Result<usize> {
            self.0.lock().unwrap().extend_from_slice(b);
            Ok(b.len())
        }
        fn flush(&mut self) -> io::Result<()> {
            Ok(())
        }
    }

    fn recorded() -> String {
        let buf = Arc::new(Mutex::new(Vec::new()));
        let mut w = TraceWriter::to_writer(Box::new(Shared(buf.clone())));
        w.frame(
            Direction::Send,
            &json!({"jsonrpc": "2.0", "id": 1, "method": "initialize"}),
        );
        w.frame(Direction::Recv, &json!({"jsonrpc": "2.0", "id": 1, "result": {}}));
        w.header(json!({"environment": null, "workspace_digest": "sha256:x"}));
        w.event("cache_hit", json!({"method": "m"}));
        w.finish();
        let bytes = buf.lock().unwrap().clone();
        String::from_utf8(bytes).unwrap()
    }

    #[test]
    fn header_first_then_ordered_entries() {
        let text = recorded();
        let log = TraceLog::parse(&text).unwrap();
        assert_eq!(log.header.workspace_digest.as_deref(), Some("sha256:x"));
        assert_eq!(log.entries.len(), 4);
        assert_eq!(log.frames(Direction::Send).len(), 1);
        assert_eq!(log.events("cache_hit").len(), 1);
    }

    #[test]
    fn tampering_and_truncation_detected() {
        let text = recorded();
        let tampered = text.replacen("initialize", "initializf", 1);
        let e = TraceLog::parse(&tampered).unwrap_err();
        assert_eq!(e.code, ErrorCode::ReplayMismatch);
        assert!(e.message.contains("seq 1"), "{}", e.message);

        let lines: Vec<&str> = text.lines().collect();
        let cut = lines[..lines.len() - 1].join("\n");
        let e = TraceLog::parse(&cut).unwrap_err();
        assert!(e.message.contains("truncated after seq 3"), "{}", e.message);

        let partial = &text[..text.len() - 10];
        assert_eq!(TraceLog::parse(partial).unwrap_err().code, ErrorCode::ReplayMismatch);
    }
}
