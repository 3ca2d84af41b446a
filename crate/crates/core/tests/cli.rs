mod common;

use common::{error_symbol, Fixture};
use lanser_core::bundle::validate_bundle;
use lanser_core::facts::symbol_id;
use serde_json::{json, Value};

#[test]
fn def_returns_definitions_hover_and_environment() {
    let fx = Fixture::new();
    let run = fx.lanser(&["--json", "def", "py://pkg.helpers#Greeter.greet:sig"]);
    assert_eq!(run.code, 0, "{}", run.stdout);
    let b = run.bundle();
    assert_eq!(
        b["facts"]["definitions"],
        json!([{ "uri": "pkg/helpers.py", "range": [10, 9, 10, 14] }])
    );
    assert_eq!(b["facts"]["hover"], "(method) def greet(self, name) -> str");
    assert_eq!(b["environment"]["server"]["name"], "lanser-mockls");
    assert_eq!(b["environment"]["positionEncoding"], "utf-16");
    assert_eq!(b["resolution"]["resolved"]["uri"], "pkg/helpers.py");
    assert_eq!(b["request"]["selector"]["kind"], "symbol");
    assert!(validate_bundle(run.stdout.trim().as_bytes()).is_ok());
}

#[test]
fn symbol_ids_agree_between_def_and_symbols() {
    let fx = Fixture::new();
    let def = fx.lanser(&["--json", "def", "pkg/mod.py@L7:C20"]).bundle();
    let syms = fx.lanser(&["--json", "symbols", "pkg/helpers.py"]).bundle();
    let normalize = syms["facts"]["symbols"]
        .as_array()
        .unwrap()
        .iter()
        .find(|s| s["qualname"] == "normalize")
        .unwrap()
        .clone();
    assert_eq!(def["facts"]["symbolId"], normalize["symbolId"]);
    assert_eq!(
        normalize["symbolId"],
        symbol_id("pkg.helpers", "normalize", &["function"])
    );
    let qualnames: Vec<&str> = syms["facts"]["symbols"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["qualname"].as_str().unwrap())
        .collect();
    assert_eq!(qualnames, ["normalize", "Greeter", "Greeter.greet"]);
}

#[test]
fn references_paginate_with_a_cursor() {
    let fx = Fixture::new();
    let first = fx
        .lanser(&["--json", "refs", "pkg/mod.py@L7:C20", "--page-size", "3"])
        .bundle();
    assert_eq!(first["meta"]["truncated"], true);
    assert_eq!(first["facts"]["total"], 5);
    let cursor = first["meta"]["cursor"].as_str().unwrap().to_string();
    let second = fx
        .lanser(&[
            "--json",
            "refs",
            "pkg/mod.py@L7:C20",
            "--page-size",
            "3",
            "--after",
            &cursor,
        ])
        .bundle();
    assert!(second["meta"].get("truncated").is_none());
    let mut all: Vec<Value> = first["facts"]["references"].as_array().unwrap().clone();
    all.extend(second["facts"]["references"].as_array().unwrap().iter().cloned());
    let uris: Vec<&str> = all.iter().map(|r| r["uri"].as_str().unwrap()).collect();
    assert_eq!(
        uris,
        [
            "pkg/__init__.py",
            "pkg/helpers.py",
            "pkg/helpers.py",
            "pkg/mod.py",
            "pkg/mod.py"
        ]
    );
}

#[test]
fn diagnostics_and_locate() {
    let fx = Fixture::new();
    let diag = fx.lanser(&["--json", "diag", "pkg/mod.py@L1:C1"]).bundle();
    assert_eq!(diag["facts"]["diagnostics"][0]["range"], json!([7, 20, 7, 29]));
    assert_eq!(diag["processReward"]["components"]["diag_delta"], 0);
    let loc = fx
        .lanser(&[
            "--json",
            "locate",
            "anchor://pkg/helpers.py#\"return value.strip().lower()\"",
        ])
        .bundle();
    assert_eq!(loc["facts"]["provenance"], "relocate");
    assert_eq!(loc["facts"]["range"], json!([6, 5, 6, 33]));
}

#[test]
fn human_output_is_default_and_stderr_carries_coordinates() {
    let fx = Fixture::new();
    let run = fx.lanser(&["--verbose", "def", "pkg/mod.py@L7:C20"]);
    assert_eq!(run.code, 0);
    assert!(run.stdout.contains("definitions (1):"));
    assert!(run.stdout.contains("pkg/helpers.py:4:5-4:14"));
    assert!(!run.stdout.contains("resolved pkg/mod.py L7"));
    assert!(run.stderr.contains("resolved pkg/mod.py L7:C20->L7:C20 [utf-16]"));
}

#[test]
fn verbose_fields_stay_out_of_the_bundle_id() {
    let fx = Fixture::new();
    let plain = fx.lanser(&["--json", "def", "pkg/mod.py@L7:C20"]).bundle();
    let verbose = fx.lanser(&["--json", "--verbose", "def", "pkg/mod.py@L7:C20"]).bundle();
    assert_eq!(plain["bundleId"], verbose["bundleId"]);
    assert!(verbose["meta"]["pid"].is_u64());
    assert!(plain["meta"].get("pid").is_none());
}

#[test]
fn canonical_output_is_jcs() {
    let fx = Fixture::new();
    let run = fx.lanser(&["--canonical", "def", "pkg/mod.py@L7:C20"]);
    let v: Value = serde_json::from_str(run.stdout.trim()).unwrap();
    assert_eq!(run.stdout.trim(), serde_jcs::to_string(&v).unwrap());
}

#[test]
fn batch_preserves_order_and_isolates_bad_lines() {
    let fx = Fixture::new();
    let input = [
        r#"{"cmd": "def", "selector": "pkg/mod.py@L7:C20"}"#,
        r#"{"cmd": "def", "selector": 42, "bogus": true}"#,
        r#"{"cmd": "hover", "selector": "pkg/helpers.py@L4:C5"}"#,
    ]
    .join("\n");
    let run = fx.lanser_stdin(&["batch"], Some(&input));
    let bundles = run.bundles();
    assert_eq!(bundles.len(), 3);
    assert_eq!(bundles[0]["request"]["cmd"], "def");
    assert_eq!(error_symbol(&bundles[1]), Some("E/BAD_SELECTOR_SYNTAX"));
    assert_eq!(bundles[2]["facts"]["hover"], "def normalize(value)");
    assert_eq!(run.code, 2);
    for line in run.stdout.lines() {
        assert!(validate_bundle(line.as_bytes()).is_ok(), "{line}");
    }
}

#[test]
fn batch_repeats_hit_the_cache() {
    let fx = Fixture::new();
    let trace = fx.dir.path().join("batch.jsonl");
    let line = r#"{"cmd": "def", "selector": "pkg/mod.py@L7:C20"}"#;
    let run = fx.lanser_stdin(
        &["batch", "--trace-file", trace.to_str().unwrap()],
        Some(&format!("{line}\n{line}\n")),
    );
    assert_eq!(run.code, 0);
    let b = run.bundles();
    assert_eq!(b[0]["bundleId"], b[1]["bundleId"]);
    let log = lanser_core::trace::TraceLog::read(&trace).unwrap();
    assert!(log
        .events("cache_hit")
        .iter()
        .any(|e| e["method"] == "textDocument/definition"));
}

#[test]
fn structured_selectors_are_accepted() {
    let fx = Fixture::new();
    let sel = r#"{"kind": "cursor", "uri": "pkg/mod.py", "line": 7, "col": 20}"#;
    let run = fx.lanser(&["--json", "def", sel]);
    assert_eq!(run.code, 0);
    let text = fx.lanser(&["--json", "def", "pkg/mod.py@L7:C20"]).bundle();
    assert_eq!(run.bundle()["bundleId"], text["bundleId"]);
}

#[test]
fn schema_export_is_stable_and_validates_bundles() {
    let fx = Fixture::new();
    let a = fx.lanser(&["schema", "export", "bundles"]);
    let b = fx.lanser(&["schema", "export", "bundles"]);
    assert_eq!(a.stdout, b.stdout);
    let sel = fx.lanser(&["schema", "export", "selectors"]);
    assert!(sel.stdout.contains("\"anchor\""));

    let bundle = fx.lanser(&["--json", "def", "pkg/mod.py@L7:C20"]).stdout;
    let good = fx.dir.path().join("good.json");
    std::fs::write(&good, &bundle).unwrap();
    let ok = fx.lanser(&["schema", "validate", "bundles", good.to_str().unwrap()]);
    assert_eq!(ok.code, 0, "{}", ok.stdout);

    let mut broken: Value = serde_json::from_str(&bundle).unwrap();
    broken["facts"]["definitions"][0]["range"] = json!([0, 1, 2]);
    let bad = fx.dir.path().join("bad.json");
    std::fs::write(&bad, serde_json::to_vec(&broken).unwrap()).unwrap();
    let fail = fx.lanser(&["schema", "validate", "bundles", bad.to_str().unwrap()]);
    assert_eq!(fail.code, 1);
    assert!(fail.stdout.contains("/facts/definitions/0/range"), "{}", fail.stdout);
}

#[test]
fn rename_flags_are_exclusive_and_need_a_name() {
    let fx = Fixture::new();
    let both = fx.lanser(&["rename", "pkg/mod.py@L7:C20", "x", "--apply", "--dry-run"]);
    assert_eq!(both.code, 2);
    assert!(both.stdout.is_empty());
    let missing = fx.lanser(&["rename", "pkg/mod.py@L7:C20"]);
    assert_eq!(missing.code, 2);
}

#[test]
fn jail_refuses_denied_paths() {
    let fx = Fixture::new();
    let before = fx.tree_digest();
    let run = fx.lanser(&[
        "--json",
        "--deny-path",
        "pkg/mod.py",
        "--allow-dirty",
        "rename",
        "pkg/mod.py@L7:C20",
        "canonicalize",
        "--apply",
    ]);
    assert_eq!(run.code, 71);
    let b = run.bundle();
    assert_eq!(b["meta"]["error"]["details"]["path"], "pkg/mod.py");
    assert_eq!(fx.tree_digest(), before);
}

#[test]
fn dirty_worktree_blocks_apply() {
    let fx = Fixture::new();
    let git = |args: &[&str]| {
        let ok = std::process::Command::new("git")
            .arg("-C")
            .arg(&fx.root)
            .args(args)
            .env("GIT_AUTHOR_NAME", "t")
            .env("GIT_AUTHOR_EMAIL", "t@example.com")
            .env("GIT_COMMITTER_NAME", "t")
            .env("GIT_COMMITTER_EMAIL", "t@example.com")
            .output()
            .map(|o| o.status.success())
            .unwrap_or(false);
        ok
    };
    if !git(&["init", "-q"]) {
        eprintln!("git unavailable; skipping");
        return;
    }
    assert!(git(&["add", "-A"]));
    assert!(git(&["commit", "-q", "-m", "fixture"]));
    std::fs::write(fx.path("pkg/dup.py"), "x = 1\n").unwrap();
    let before = fx.tree_digest();
    let run = fx.lanser(&["--json", "rename", "pkg/mod.py@L7:C20", "canonicalize", "--apply"]);
    assert_eq!(run.code, 71);
    assert_eq!(run.bundle()["meta"]["error"]["details"]["dirty"], json!(["pkg/dup.py"]));
    assert_eq!(fx.tree_digest(), before);
    let dry = fx.lanser(&["--json", "rename", "pkg/mod.py@L7:C20", "canonicalize", "--dry-run"]);
    assert_eq!(dry.code, 0);
}
