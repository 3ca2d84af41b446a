//! Executes command requests against a lazily started session and turns
//! each outcome into an analysis bundle.

use super::request::{Cmd, CommandOptions, CommandRequest};
use crate::bundle::{
    build, paginate, stable_digest, AnalysisBundle, BundleParts, EnvironmentCapture, Volatile, REFERENCE_CAP,
};
use crate::edits::fsops::{FsOps, RealFs};
use crate::edits::rename::{guarded_rename, prepare_rename, Prepare};
use crate::edits::{git, Mode};
use crate::error::{ErrorCode, LanserError, Result};
use crate::facts::{self, lsp_position};
use crate::orchestrator::{Session, SessionConfig, StartOptions};
use crate::par::Execution;
use crate::relocate::{relocate, Candidate, RelocationConfig};
use crate::reward::{compute_reward, RewardInputs, RewardRecord, RewardWeights};
use crate::selector::{parse_selector_with, IndexingMode, PositionSpec};
use crate::trace::{ReplayLauncher, TraceWriter};
use crate::workspace::{PinnedTarget, TrackingConfig, WorkspaceSnapshot};
use serde_json::{json, Value};
use std::path::PathBuf;
use std::time::{Duration, Instant, SystemTime};

#[derive(Debug, Clone)]
pub struct Settings {
    pub root: PathBuf,
    pub server_command: Vec<String>,
    pub request_timeout: Duration,
    pub tracking: TrackingConfig,
    pub initialization_options: Value,
    pub execution: Execution,
    pub verbose: bool,
    pub trace_file: Option<PathBuf>,
}

impl Settings {
    pub fn new(root: impl Into<PathBuf>, server_command: Vec<String>) -> Self {
        Settings {
            root: root.into(),
            server_command,
            request_timeout: Duration::from_secs(30),
            tracking: TrackingConfig::default(),
            initialization_options: Value::Null,
            execution: Execution::Auto,
            verbose: false,
            trace_file: None,
        }
    }

    pub fn session_config(&self) -> SessionConfig {
        let mut config = SessionConfig::new(self.server_command.clone(), &self.root);
        config.request_timeout = self.request_timeout;
        config.tracking = self.tracking.clone();
        config.initialization_options = self.initialization_options.clone();
        config.execution = self.execution;
        config
    }
}

pub struct Runner {
    settings: Settings,
    session: Option<Session>,
    trace_opened: bool,
    replay: Option<ReplayLauncher>,
    environment: Option<EnvironmentCapture>,
    snapshot: Option<WorkspaceSnapshot>,
    fs: Box<dyn FsOps>,
    /// A `command` event was written for the request in flight.
    recorded: bool,
}

impl Runner {
    pub fn new(settings: Settings) -> Self {
        Runner {
            settings,
            session: None,
            trace_opened: false,
            replay: None,
            environment: None,
            snapshot: None,
            fs: Box::new(RealFs),
            recorded: false,
        }
    }

    /// Serves the session from a recording, with the recorded environment
    /// and a pre-taken snapshot.
    pub fn replaying(
        settings: Settings,
        launcher: ReplayLauncher,
        environment: Option<EnvironmentCapture>,
        snapshot: WorkspaceSnapshot,
    ) -> Self {
        let mut r = Runner::new(settings);
        r.replay = Some(launcher);
        r.environment = environment;
        r.snapshot = Some(snapshot);
        r
    }

    pub fn with_fs(mut self, fs: Box<dyn FsOps>) -> Self {
        self.fs = fs;
        self
    }

    pub fn settings(&self) -> &Settings {
        &self.settings
    }

    pub fn session_ref(&self) -> Option<&Session> {
        self.session.as_ref()
    }

    fn start_session(&mut self) -> Result<()> {
        if self.session.is_some() {
            return Ok(());
        }
        let trace = match &self.settings.trace_file {
            Some(p) if !self.trace_opened => {
                self.trace_opened = true;
                Some(TraceWriter::create(p)?)
            }
            _ => None,
        };
        let opts = StartOptions {
            trace,
            environment: self.environment.clone(),
            snapshot: self.snapshot.take(),
        };
        let config = self.settings.session_config();
        let session = match &self.replay {
            Some(l) => Session::start(config, Box::new(l.clone()), opts)?,
            None => Session::start_process(config, opts)?,
        };
        self.session = Some(session);
        Ok(())
    }

    pub fn execute(&mut self, req: &CommandRequest, opts: &CommandOptions) -> AnalysisBundle {
        let started = Instant::now();
        let mut parts = BundleParts::new(req.cmd.as_str());
        parts.args = req.args();
        parts.selector = match &req.selector {
            Value::String(_) => req.selector.clone(),
            other => Value::String(other.to_string()),
        };
        self.recorded = false;
        if let Err(e) = self.run(req, opts, &mut parts) {
            parts.error = Some(e);
        }
        if self.settings.verbose {
            parts.volatile = Some(Volatile {
                timestamp: Some(humantime::format_rfc3339_seconds(SystemTime::now()).to_string()),
                duration_ms: Some(started.elapsed().as_millis() as u64),
                pid: Some(std::process::id()),
                trace: self
                    .settings
                    .trace_file
                    .as_ref()
                    .map(|p| json!({ "path": p.display().to_string() })),
            });
        }
        let bundle = build(parts);
        if let (true, Some(s)) = (self.recorded, &self.session) {
            s.event(
                "bundle",
                json!({ "bundleId": bundle.bundle_id, "digest": stable_digest(&bundle) }),
            );
        }
        bundle
    }

    fn parse(&self, req: &CommandRequest, opts: &CommandOptions) -> Result<PositionSpec> {
        let text = match &req.selector {
            Value::String(s) => s,
            structured => return structured_selector(structured),
        };
        match parse_selector_with(text, opts.index_io) {
            Ok(spec) => Ok(spec),
            Err(e) if req.cmd == Cmd::Symbols && !text.contains('@') && !text.contains("://") => {
                parse_selector_with(&format!("{text}@L1:C1"), opts.index_io).map_err(|_| e)
            }
            Err(e) => Err(e),
        }
    }

    fn run(&mut self, req: &CommandRequest, opts: &CommandOptions, parts: &mut BundleParts) -> Result<()> {
        let spec = self.parse(req, opts)?;
        parts.selector = serde_json::to_value(&spec).map_err(|e| LanserError::internal(e.to_string()))?;
        let mode = req.mode.unwrap_or(Mode::DryRun);
        let new_name = match (req.cmd, &req.new_name) {
            (Cmd::Rename, Some(n)) if !n.is_empty() => Some(n.clone()),
            (Cmd::Rename, _) => {
                return Err(LanserError::new(
                    ErrorCode::BadSelectorSyntax,
                    "rename requires a new name",
                ))
            }
            _ => None,
        };
        if req.cmd == Cmd::Rename && mode == Mode::Apply {
            git::require_clean(&self.settings.root, opts.allow_dirty)?;
        }

        self.start_session()?;
        let session = self.session.as_ref().expect("session started");
        session.event("command", json!({ "request": req, "options": opts }));
        self.recorded = true;
        parts.environment = Some(session.environment().clone());

        let cfg = RelocationConfig {
            encoding: session.encoding(),
            require_unique: opts.deny_apply_on_ambiguous,
            execution: self.settings.execution,
            ..RelocationConfig::default()
        };
        parts.meta.insert("relocation".into(), cfg.describe());
        let snapshot = session.snapshot();
        let resolution = relocate(&spec, &snapshot, &cfg);
        if self.settings.verbose {
            report_coordinates(&snapshot, &resolution.resolved, session.encoding(), opts.index_io);
        }
        if let Some(code) = resolution.error {
            let message = resolution.message.clone().unwrap_or_else(|| code.symbol().to_string());
            parts.resolution = Some(resolution);
            return Err(LanserError::new(code, message));
        }
        let target = resolution
            .resolved
            .clone()
            .ok_or_else(|| LanserError::internal("resolution without target"))?;
        if let Some(v) = &spec.doc_version {
            session.pin(
                &resolution.original,
                v,
                PinnedTarget {
                    uri: target.uri.clone(),
                    range: target.range,
                    focus: Some(target.focus),
                },
            );
        }
        let confidence = resolution.confidence();
        parts.resolution = Some(resolution);
        let read_only = |parts: &mut BundleParts, diags: u64| -> Result<()> {
            parts.reward = Some(reward(diags, diags, true, confidence)?);
            Ok(())
        };

        match req.cmd {
            Cmd::Def => {
                session.ensure_open(&target.uri)?;
                let params = position_params(session, &target);
                let defs = facts::locations(&session.request("textDocument/definition", params.clone())?, session);
                let hover = if session.has_capability("hoverProvider") {
                    facts::hover_text(&session.request("textDocument/hover", params)?)
                } else {
                    None
                };
                let (uri, range) = defs
                    .first()
                    .map_or((target.uri.as_str(), target.range), |l| (l.uri.as_str(), l.range));
                let symbol_id = facts::symbol_id_at(&session.snapshot(), uri, range, session.encoding());
                parts.facts =
                    json!({ "provenance": "lsp", "definitions": defs, "hover": hover, "symbolId": symbol_id });
                read_only(parts, 0)
            }
            Cmd::Refs => {
                session.ensure_open(&target.uri)?;
                let mut params = position_params(session, &target);
                params["context"] = json!({ "includeDeclaration": true });
                let locs = facts::locations(&session.request("textDocument/references", params)?, session);
                let total = locs.len();
                let cap = req.page_size.unwrap_or(REFERENCE_CAP).clamp(1, REFERENCE_CAP);
                let page = paginate(locs, req.after.as_deref(), cap)?;
                parts.facts = json!({ "provenance": "lsp", "references": page.items, "total": total });
                if page.truncated {
                    parts.meta.insert("truncated".into(), json!(true));
                    parts.meta.insert("cursor".into(), json!(page.cursor));
                }
                read_only(parts, 0)
            }
            Cmd::Hover => {
                if !session.has_capability("hoverProvider") {
                    return Err(LanserError::new(
                        ErrorCode::UnsupportedCap,
                        "server does not provide hover",
                    ));
                }
                session.ensure_open(&target.uri)?;
                let hover =
                    facts::hover_text(&session.request("textDocument/hover", position_params(session, &target))?);
                parts.facts = json!({ "provenance": "lsp", "hover": hover });
                read_only(parts, 0)
            }
            Cmd::Symbols => {
                session.ensure_open(&target.uri)?;
                let params = json!({ "textDocument": { "uri": session.abs_uri(&target.uri) } });
                let result = session.request("textDocument/documentSymbol", params)?;
                let module = snapshot.module_of(&target.uri);
                let symbols = facts::flatten_symbols(&result, &target.uri, &module, Some(session));
                parts.facts = json!({ "provenance": "lsp", "symbols": symbols });
                read_only(parts, 0)
            }
            Cmd::Diag => {
                let diagnostics = facts::pull_diagnostics(session, &target.uri)?;
                let n = diagnostics.len() as u64;
                parts.facts = json!({ "provenance": "lsp", "diagnostics": diagnostics });
                read_only(parts, n)
            }
            Cmd::Locate => {
                let preview = preview(&snapshot, &target, session.encoding());
                parts.facts =
                    json!({ "provenance": "relocate", "uri": target.uri, "range": target.range, "preview": preview });
                read_only(parts, 0)
            }
            Cmd::PrepareRename => {
                let prepare = prepare_rename(session, &target)?;
                parts.facts = json!({ "provenance": "lsp", "prepareRename": prepare.to_value() });
                if prepare == Prepare::Rejected {
                    return Err(LanserError::new(
                        ErrorCode::NotFound,
                        format!(
                            "server rejected rename at {}:{}:{}",
                            target.uri, target.focus[0], target.focus[1]
                        ),
                    ));
                }
                read_only(parts, 0)
            }
            Cmd::Rename => {
                let new_name = new_name.expect("checked above");
                let outcome = guarded_rename(session, &target, &new_name, mode, &opts.policy(), self.fs.as_ref());
                let touched = outcome.plan.as_ref().map(|p| p.touched_files()).unwrap_or_default();
                parts.facts = json!({
                    "provenance": "lsp",
                    "prepareRename": outcome.prepare.as_ref().map(Prepare::to_value),
                    "mode": mode,
                    "touchedFiles": touched,
                    "applied": outcome.applied.is_some(),
                    "diagnosticCounts": { "before": outcome.diagnostics_before, "after": outcome.diagnostics_after },
                });
                if let Some(plan) = &outcome.plan {
                    parts.edits.workspace_edit = Some(plan.workspace_edit_value());
                    parts.edits.diff = Some(plan.diff());
                }
                parts.edits.conflicts = outcome.conflicts.clone();
                parts.reward = Some(reward(
                    outcome.diagnostics_before,
                    outcome.diagnostics_after,
                    outcome.safety(),
                    confidence,
                )?);
                match outcome.error {
                    Some(e) => Err(e),
                    None => Ok(()),
                }
            }
        }
    }

    /// Shuts the session down and finalizes the trace. A trace file that
    /// never saw a session still gets a well-formed, empty recording.
    pub fn finish(mut self) -> Result<()> {
        match self.session.take() {
            Some(s) => s.shutdown(),
            None => {
                if let (Some(p), false) = (&self.settings.trace_file, self.trace_opened) {
                    let mut w = TraceWriter::create(p)?;
                    w.finish();
                    if let Some(e) = w.error() {
                        return Err(LanserError::new(
                            ErrorCode::FsPermissions,
                            format!("writing trace: {e}"),
                        ));
                    }
                }
                Ok(())
            }
        }
    }
}

fn structured_selector(v: &Value) -> Result<PositionSpec> {
    let spec: PositionSpec = serde_json::from_value(v.clone())
        .map_err(|e| LanserError::new(ErrorCode::BadSelectorSyntax, format!("structured selector: {e}")))?;
    spec.validate()?;
    Ok(spec)
}

fn reward(d_prev: u64, d_curr: u64, safety_pass: bool, alpha_conf: f64) -> Result<RewardRecord> {
    compute_reward(
        &RewardInputs {
            d_prev,
            d_curr,
            safety_pass,
            alpha_conf: alpha_conf.clamp(0.0, 1.0),
        },
        &RewardWeights::default(),
    )
}

fn position_params(session: &Session, target: &Candidate) -> Value {
    json!({
        "textDocument": { "uri": session.abs_uri(&target.uri) },
        "position": lsp_position(target.focus),
    })
}

fn preview(snapshot: &WorkspaceSnapshot, target: &Candidate, enc: IndexingMode) -> Option<String> {
    let entry = snapshot.get(&target.uri)?;
    let text = entry.text()?;
    let lines = entry.lines()?;
    let [sl, sc, el, ec] = target.range;
    let start = lines.offset(text, sl, sc, enc).ok()?;
    let end = lines.offset(text, el, ec, enc).ok()?;
    text.get(start..end).map(str::to_string)
}

/// Prints the resolved range in both the server encoding and the caller's
/// indexing mode.
fn report_coordinates(
    snapshot: &WorkspaceSnapshot,
    resolved: &Option<Candidate>,
    server: IndexingMode,
    io: IndexingMode,
) {
    let Some(c) = resolved else { return };
    let converted = snapshot.get(&c.uri).and_then(|entry| {
        let text = entry.text()?;
        let lines = entry.lines()?;
        let [sl, sc, el, ec] = c.range;
        let s = lines.offset(text, sl, sc, server).ok()?;
        let e = lines.offset(text, el, ec, server).ok()?;
        Some(lines.range(text, s, e, io))
    });
    let fmt = |r: [u32; 4]| format!("L{}:C{}->L{}:C{}", r[0], r[1], r[2], r[3]);
    match converted {
        Some(r) => eprintln!("resolved {} {} [{}] = {} [{}]", c.uri, fmt(c.range), server, fmt(r), io),
        None => eprintln!("resolved {} {} [{}]", c.uri, fmt(c.range), server),
    }
}
