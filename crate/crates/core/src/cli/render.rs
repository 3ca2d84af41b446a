//! Human-readable rendering of a bundle.

use crate::bundle::AnalysisBundle;
use serde_json::Value;
use std::fmt::Write;

fn span(v: &Value) -> String {
    let n = |i: usize| v["range"][i].as_u64().unwrap_or(0);
    format!(
        "{}:{}:{}-{}:{}",
        v["uri"].as_str().unwrap_or("?"),
        n(0),
        n(1),
        n(2),
        n(3)
    )
}

fn list(out: &mut String, title: &str, items: Option<&Vec<Value>>, line: impl Fn(&Value) -> String) {
    let Some(items) = items else { return };
    let _ = writeln!(out, "{title} ({}):", items.len());
    for v in items {
        let _ = writeln!(out, "  {}", line(v));
    }
}

pub fn render_human(b: &AnalysisBundle) -> String {
    let mut out = String::new();
    let cmd = b.request["cmd"].as_str().unwrap_or("?");
    if let Some(err) = b.meta.get("error") {
        let _ = writeln!(
            out,
            "{cmd}: {} {} (exit {})",
            err["symbol"].as_str().unwrap_or("E/INTERNAL"),
            err["message"].as_str().unwrap_or(""),
            b.exit_code()
        );
    }
    if let Some(r) = b.resolution.get("resolved").filter(|r| !r.is_null()) {
        let _ = writeln!(
            out,
            "resolved {} score {:.3}",
            span(r),
            r["score"].as_f64().unwrap_or(0.0)
        );
    }
    if let Some(d) = b
        .resolution
        .get("disambiguation")
        .and_then(Value::as_array)
        .filter(|d| !d.is_empty())
    {
        let _ = writeln!(out, "candidates:");
        for c in d {
            let _ = writeln!(
                out,
                "  {} score {:.3} {}",
                span(c),
                c["score"].as_f64().unwrap_or(0.0),
                c["explanation"].as_str().unwrap_or("")
            );
        }
    }

    let f = &b.facts;
    list(&mut out, "definitions", f["definitions"].as_array(), span);
    if let Some(refs) = f["references"].as_array() {
        let total = f["total"].as_u64().unwrap_or(refs.len() as u64);
        let _ = writeln!(out, "references ({} of {total}):", refs.len());
        for r in refs {
            let _ = writeln!(out, "  {}", span(r));
        }
        if let Some(c) = b.meta.get("cursor").and_then(Value::as_str) {
            let _ = writeln!(out, "more: --after {c}");
        }
    }
    list(&mut out, "symbols", f["symbols"].as_array(), |s| {
        format!(
            "{} {} {}",
            s["kind"].as_str().unwrap_or("?"),
            s["qualname"].as_str().unwrap_or("?"),
            span(s)
        )
    });
    list(&mut out, "diagnostics", f["diagnostics"].as_array(), |d| {
        format!("{} {}", span(d), d["message"].as_str().unwrap_or(""))
    });
    if let Some(h) = f["hover"].as_str() {
        let _ = writeln!(out, "hover:\n{}", h.trim_end());
    }
    if let Some(p) = f["preview"].as_str() {
        let _ = writeln!(out, "{}\n{}", span(f), p.trim_end());
    }
    if let Some(p) = f.get("prepareRename").filter(|p| !p.is_null()) {
        let _ = writeln!(
            out,
            "prepare-rename: {}",
            if p["accepted"] == Value::Bool(true) {
                "accepted"
            } else {
                "rejected"
            }
        );
    }
    if let Some(files) = f["touchedFiles"].as_array() {
        let names: Vec<&str> = files.iter().filter_map(Value::as_str).collect();
        let applied = if f["applied"] == Value::Bool(true) {
            "applied"
        } else {
            "not applied"
        };
        let _ = writeln!(out, "touched {} file(s), {applied}: {}", names.len(), names.join(", "));
    }
    if let Some(diff) = b.edits.diff.as_deref().filter(|d| !d.is_empty()) {
        out.push_str(diff);
        if !diff.ends_with('\n') {
            out.push('\n');
        }
    }
    for c in &b.edits.conflicts {
        let _ = writeln!(out, "conflict {} {}", c.file, c.hunk_header);
    }
    if let Some(r) = &b.process_reward {
        let _ = writeln!(out, "reward {:.4}: {}", r.r, r.explanation);
    }
    let _ = writeln!(out, "bundle {}", b.bundle_id);
    out
}
