mod common;

use common::{error_symbol, Fixture};
use serde_json::{json, Value};
use std::path::{Path, PathBuf};

const DEF: &str = r#"{"cmd": "def", "selector": "pkg/mod.py@L7:C20"}"#;
const REFS: &str = r#"{"cmd": "refs", "selector": "pkg/mod.py@L7:C20", "pageSize": 2}"#;
const DIAG: &str = r#"{"cmd": "diag", "selector": "pkg/mod.py@L1:C1"}"#;
const HOVER: &str = r#"{"cmd": "hover", "selector": "py://pkg.helpers#Greeter.greet"}"#;

fn record(fx: &Fixture, name: &str, lines: &[&str]) -> (PathBuf, Vec<Value>) {
    let trace = fx.dir.path().join(name);
    let run = fx.lanser_stdin(
        &["--canonical", "--trace-file", trace.to_str().unwrap(), "batch"],
        Some(&lines.join("\n")),
    );
    assert_eq!(run.code, 0, "{}", run.stdout);
    (trace, run.bundles())
}

fn replay(fx: &Fixture, trace: &Path) -> common::Run {
    fx.lanser(&["--canonical", "trace", "replay", trace.to_str().unwrap()])
}

#[test]
fn replay_regenerates_identical_bundles() {
    let fx = Fixture::new();
    let (trace, recorded) = record(&fx, "t.jsonl", &[DEF, REFS, DIAG, HOVER, DEF]);
    let run = replay(&fx, &trace);
    assert_eq!(run.code, 0, "{}", run.stdout);
    let recorded_text: Vec<String> = recorded.iter().map(|b| serde_jcs::to_string(b).unwrap()).collect();
    let replayed: Vec<&str> = run.stdout.lines().collect();
    assert_eq!(replayed, recorded_text);
}

#[test]
fn edited_workspace_is_a_replay_mismatch() {
    let fx = Fixture::new();
    let (trace, _) = record(&fx, "t.jsonl", &[DEF]);
    let text = fx.read("pkg/helpers.py") + "\n# edited\n";
    std::fs::write(fx.path("pkg/helpers.py"), text).unwrap();
    let run = replay(&fx, &trace);
    assert_eq!(run.code, 76);
    let last = run.bundles().pop().unwrap();
    assert_eq!(error_symbol(&last), Some("E/REPLAY_MISMATCH"));
    assert!(last["meta"]["error"]["details"]["recorded"].is_string());
}

#[test]
fn truncated_trace_names_the_sequence_number() {
    let fx = Fixture::new();
    let (trace, _) = record(&fx, "t.jsonl", &[DEF, REFS]);
    let text = std::fs::read_to_string(&trace).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let cut = lines[..lines.len() - 3].join("\n") + "\n";
    std::fs::write(&trace, cut).unwrap();
    let run = replay(&fx, &trace);
    assert_eq!(run.code, 76);
    let msg = run.bundle()["meta"]["error"]["message"].as_str().unwrap().to_string();
    assert!(msg.contains(&format!("seq {}", lines.len() - 4)), "{msg}");
}

#[test]
fn tampered_frames_are_detected() {
    let fx = Fixture::new();
    let (trace, _) = record(&fx, "t.jsonl", &[DEF]);
    let text = std::fs::read_to_string(&trace).unwrap();
    let tampered = text.replacen("\"line\":3", "\"line\":4", 1);
    assert_ne!(tampered, text);
    std::fs::write(&trace, tampered).unwrap();
    let run = replay(&fx, &trace);
    assert_eq!(run.code, 76);
    let msg = run.bundle()["meta"]["error"]["message"].as_str().unwrap().to_string();
    assert!(msg.contains("frame digest mismatch"), "{msg}");
}

#[test]
fn a_recorded_apply_replays_after_restoring_the_tree() {
    let fx = Fixture::new();
    let files = ["pkg/__init__.py", "pkg/helpers.py", "pkg/mod.py"];
    let originals: Vec<String> = files.iter().map(|f| fx.read(f)).collect();
    let pre = fx.tree_digest();
    let trace = fx.dir.path().join("apply.jsonl");
    let args = ["--json", "--allow-dirty", "--trace-file", trace.to_str().unwrap()];
    let run = fx.lanser(&[&args[..], &["rename", "pkg/mod.py@L7:C20", "canonicalize", "--apply"]].concat());
    assert_eq!(run.code, 0, "{}", run.stdout);
    let applied = run.bundle();
    assert_eq!(applied["facts"]["applied"], true);
    let post = fx.tree_digest();

    let stale = fx.lanser(&["--json", "trace", "replay", trace.to_str().unwrap()]);
    assert_eq!(stale.code, 76);
    assert_eq!(fx.tree_digest(), post);

    for (f, text) in files.iter().zip(&originals) {
        std::fs::write(fx.path(f), text).unwrap();
    }
    assert_eq!(fx.tree_digest(), pre);
    let again = fx.lanser(&["--json", "--allow-dirty", "trace", "replay", trace.to_str().unwrap()]);
    assert_eq!(again.code, 0, "{}", again.stdout);
    assert_eq!(again.bundle()["bundleId"], applied["bundleId"]);
    assert_eq!(fx.tree_digest(), post);
}

#[test]
fn a_recorded_crash_replays() {
    let fx = Fixture::with_script(|s| s["crash_after"] = json!(2));
    let trace = fx.dir.path().join("crash.jsonl");
    let run = fx.lanser_stdin(
        &["--canonical", "--trace-file", trace.to_str().unwrap(), "batch"],
        Some(&[DEF, REFS, DEF].join("\n")),
    );
    let bundles = run.bundles();
    assert!(
        bundles.iter().any(|b| error_symbol(b) == Some("E/LS_CRASH")),
        "{}",
        run.stdout
    );
    let again = replay(&fx, &trace);
    assert_eq!(again.code, 0, "{}", again.stdout);
    assert_eq!(again.stdout, run.stdout);
}
