#![allow(dead_code)]

pub mod strategies;

use serde_json::Value;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use tempfile::TempDir;

pub const LANSER: &str = env!("CARGO_BIN_EXE_lanser");
pub const MOCKLS: &str = env!("CARGO_BIN_EXE_lanser-mockls");

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn base_script() -> Value {
    let text = std::fs::read_to_string(fixtures().join("mock.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

/// A private copy of the fixture workspace plus a mock script beside it.
pub struct Fixture {
    pub dir: TempDir,
    pub root: PathBuf,
    pub script: PathBuf,
}

fn copy_tree(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for entry in std::fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let target = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_tree(&entry.path(), &target);
        } else {
            std::fs::copy(entry.path(), &target).unwrap();
        }
    }
}

impl Fixture {
    pub fn new() -> Fixture {
        Fixture::with_script(|_| {})
    }

    /// Fixture whose mock script is the base script after `edit`.
    pub fn with_script(edit: impl FnOnce(&mut Value)) -> Fixture {
        let dir = TempDir::new().unwrap();
        let root = dir.path().join("ws");
        copy_tree(&fixtures().join("ws"), &root);
        let root = root.canonicalize().unwrap();
        let script = dir.path().join("mock.json");
        let mut s = base_script();
        edit(&mut s);
        std::fs::write(&script, serde_json::to_vec_pretty(&s).unwrap()).unwrap();
        Fixture { dir, root, script }
    }

    pub fn server_cmd(&self) -> String {
        shlex::try_join([MOCKLS, "--script", self.script.to_str().unwrap()]).unwrap()
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn read(&self, rel: &str) -> String {
        std::fs::read_to_string(self.path(rel)).unwrap()
    }

    /// Runs `lanser` against this fixture and its mock server.
    pub fn lanser(&self, args: &[&str]) -> Run {
        self.lanser_stdin(args, None)
    }

    pub fn lanser_stdin(&self, args: &[&str], stdin: Option<&str>) -> Run {
        let mut cmd = Command::new(LANSER);
        cmd.arg("--root")
            .arg(&self.root)
            .arg("--server-cmd")
            .arg(self.server_cmd())
            .args(args);
        cmd.env_remove("LANSER_SERVER_CMD");
        let out = match stdin {
            None => cmd.output().unwrap(),
            Some(input) => {
                use std::io::Write;
                use std::process::Stdio;
                let mut child = cmd
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::piped())
                    .spawn()
                    .unwrap();
                child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
                child.wait_with_output().unwrap()
            }
        };
        Run::from(out)
    }

    pub fn tree_digest(&self) -> String {
        tree_digest(&self.root)
    }
}

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl From<Output> for Run {
    fn from(o: Output) -> Run {
        Run {
            code: o.status.code().unwrap_or(-1),
            stdout: String::from_utf8(o.stdout).unwrap(),
            stderr: String::from_utf8(o.stderr).unwrap(),
        }
    }
}

impl Run {
    /// The single bundle on stdout.
    pub fn bundle(&self) -> Value {
        serde_json::from_str(self.stdout.trim())
            .unwrap_or_else(|e| panic!("stdout is not one bundle ({e}): {}", self.stdout))
    }

    pub fn bundles(&self) -> Vec<Value> {
        self.stdout.lines().map(|l| serde_json::from_str(l).unwrap()).collect()
    }
}

pub fn error_symbol(bundle: &Value) -> Option<&str> {
    bundle.pointer("/meta/error/symbol").and_then(Value::as_str)
}

/// Digest over every relative path and file content under `root`, ignoring
/// the apply lock and transaction directory.
pub fn tree_digest(root: &Path) -> String {
    let mut entries: Vec<(String, Vec<u8>)> = walkdir::WalkDir::new(root)
        .into_iter()
        .filter_entry(|e| {
            let name = e.file_name().to_string_lossy();
            name != ".lanser.lock" && name != ".lanser-txn"
        })
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_file())
        .map(|e| {
            let rel = e
                .path()
                .strip_prefix(root)
                .unwrap()
                .to_string_lossy()
                .replace('\\', "/");
            (rel, std::fs::read(e.path()).unwrap())
        })
        .collect();
    entries.sort();
    let mut h = Sha256::new();
    for (rel, bytes) in entries {
        h.update(rel.as_bytes());
        h.update([0]);
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    hex::encode(h.finalize())
}

/// LSP range object from 0-based coordinates.
pub fn lsp_range(l: u64, a: u64, b: u64) -> Value {
    serde_json::json!({ "start": { "line": l, "character": a }, "end": { "line": l, "character": b } })
}
