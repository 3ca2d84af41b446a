//! Wire endpoints. A [`Launcher`] produces a fresh [`FrameSink`] for each
//! server generation and feeds incoming frames to the dispatcher through an
//! [`Inbox`].

use super::dispatcher::Msg;
use super::framing::{read_frame, write_frame};
use crate::error::{ErrorCode, LanserError};
use crossbeam_channel::Sender;
use serde_json::Value;
use std::io::{self, BufReader};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::time::{Duration, Instant};

/// Delivery handle into the dispatcher for one server generation.
#[derive(Clone)]
pub struct Inbox {
    pub(crate) tx: Sender<Msg>,
    pub(crate) generation: u64,
}

impl Inbox {
    pub fn frame(&self, frame: Value) {
        let _ = self.tx.send(Msg::Incoming {
            generation: self.generation,
            frame,
        });
    }

    pub fn closed(&self, reason: impl Into<String>) {
        let _ = self.tx.send(Msg::Closed {
            generation: self.generation,
            reason: reason.into(),
        });
    }
}

pub trait FrameSink: Send {
    fn send(&mut self, frame: &Value) -> io::Result<()>;
    /// Stops the endpoint; called once before the sink is dropped.
    fn close(&mut self) {}
}

pub trait Launcher: Send {
    fn launch(&mut self, inbox: Inbox) -> Result<Box<dyn FrameSink>, LanserError>;
}

/// Spawns the server as a child process speaking LSP over stdio.
pub struct ProcessLauncher {
    pub argv: Vec<String>,
    pub cwd: PathBuf,
}

struct ChildSink {
    stdin: Option<ChildStdin>,
    child: Child,
}

impl FrameSink for ChildSink {
    fn send(&mut self, frame: &Value) -> io::Result<()> {
        match self.stdin.as_mut() {
            Some(w) => write_frame(w, frame),
            None => Err(io::Error::new(io::ErrorKind::BrokenPipe, "server stdin closed")),
        }
    }

    fn close(&mut self) {
        self.stdin.take();
        let deadline = Instant::now() + Duration::from_secs(2);
        while Instant::now() < deadline {
            if let Ok(Some(_)) = self.child.try_wait() {
                return;
            }
            std::thread::sleep(Duration::from_millis(5));
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Drop for ChildSink {
    fn drop(&mut self) {
        if self.stdin.is_some() {
            self.close();
        }
    }
}

impl Launcher for ProcessLauncher {
    fn launch(&mut self, inbox: Inbox) -> Result<Box<dyn FrameSink>, LanserError> {
        let (prog, args) = self
            .argv
            .split_first()
            .ok_or_else(|| LanserError::new(ErrorCode::LsCrash, "empty server command"))?;
        let mut child = Command::new(prog)
            .args(args)
            .current_dir(&self.cwd)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| LanserError::new(ErrorCode::LsCrash, format!("cannot start server '{prog}': {e}")))?;
        let stdout = child.stdout.take().expect("stdout piped");
        let stdin = child.stdin.take();
        std::thread::Builder::new()
            .name("lanser-reader".into())
            .spawn(move || {
                let mut r = BufReader::new(stdout);
                loop {
                    match read_frame(&mut r) {
                        Ok(Some(frame)) => inbox.frame(frame),
                        Ok(None) => return inbox.closed("server closed its output"),
                        Err(e) => return inbox.closed(format!("reading server output: {e}")),
                    }
                }
            })
            .map_err(|e| LanserError::internal(format!("spawning reader thread: {e}")))?;
        Ok(Box::new(ChildSink { stdin, child }))
    }
}
