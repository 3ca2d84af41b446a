//! The `lanser` command line.

pub mod render;
pub mod replay;
pub mod request;
pub mod runner;

pub use request::{Cmd, CommandOptions, CommandRequest};
pub use runner::{Runner, Settings};

use crate::bundle::{build, validate_bundle, AnalysisBundle, BundleParts};
use crate::edits::Mode;
use crate::error::{ErrorCode, LanserError};
use crate::par::Execution;
use crate::schema::{self, SchemaKind};
use crate::selector::IndexingMode;
use clap::{ArgAction, Args, Parser, Subcommand};
use serde_json::{json, Value};
use std::ffi::OsString;
use std::io::{self, Write};
use std::path::PathBuf;
use std::time::Duration;

pub const DEFAULT_SERVER: &str = "pyright-langserver --stdio";

#[derive(Debug, Parser)]
#[command(
    name = "lanser",
    version,
    about = "Deterministic, replayable language-server queries and refactors"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Workspace root.
    #[arg(long, global = true, default_value = ".")]
    pub root: PathBuf,
    /// Language server command line.
    #[arg(long = "server-cmd", global = true, env = "LANSER_SERVER_CMD")]
    pub server_cmd: Option<String>,
    /// Emit the bundle as compact JSON.
    #[arg(long, global = true)]
    pub json: bool,
    /// Emit the bundle as canonical (JCS) JSON.
    #[arg(long, global = true)]
    pub canonical: bool,
    /// Attach timing metadata and print dual coordinates to stderr.
    #[arg(long, global = true)]
    pub verbose: bool,
    /// Indexing mode for selector columns without an explicit one.
    #[arg(long = "index-io", global = true, default_value = "utf-16", value_parser = parse_indexing)]
    pub index_io: IndexingMode,
    /// Record the session to this file.
    #[arg(long = "trace-file", global = true)]
    pub trace_file: Option<PathBuf>,
    #[arg(long = "timeout-ms", global = true, default_value_t = 30_000)]
    pub timeout_ms: u64,
    /// Report ties at the top of the ranking instead of picking one.
    #[arg(long = "deny-apply-on-ambiguous", global = true)]
    pub deny_apply_on_ambiguous: bool,
    #[arg(long = "workspace-jail", global = true, default_value_t = true, action = ArgAction::Set,
          num_args = 0..=1, default_missing_value = "true")]
    pub workspace_jail: bool,
    #[arg(long = "allow-path", global = true)]
    pub allow_path: Vec<String>,
    #[arg(long = "deny-path", global = true)]
    pub deny_path: Vec<String>,
    /// Proceed with an apply even when the git worktree has local changes.
    #[arg(long = "allow-dirty", global = true)]
    pub allow_dirty: bool,
    /// Glob of tracked files (repeatable; default Python sources).
    #[arg(long = "include", global = true)]
    pub include: Vec<String>,
    /// Disable data-parallel snapshotting and scoring.
    #[arg(long, global = true)]
    pub sequential: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Definitions of the symbol at a selector.
    Def {
        selector: String,
    },
    /// References to the symbol at a selector.
    Refs {
        selector: String,
        /// Pagination cursor from a previous truncated page.
        #[arg(long)]
        after: Option<String>,
        #[arg(long = "page-size")]
        page_size: Option<usize>,
    },
    Hover {
        selector: String,
    },
    /// Document symbols of a file (a path or any selector into it).
    Symbols {
        target: String,
    },
    /// Diagnostics of the file a selector points into.
    Diag {
        selector: String,
    },
    /// Resolve a selector locally; the server is only used to negotiate the position encoding.
    Locate {
        selector: String,
    },
    #[command(name = "prepare-rename")]
    PrepareRename {
        selector: String,
    },
    /// Rename the symbol at a selector (preview by default).
    Rename {
        selector: String,
        new_name: String,
        #[arg(long = "dry-run", conflicts_with = "apply")]
        dry_run: bool,
        #[arg(long)]
        apply: bool,
    },
    /// Run JSON-lines requests from a file or stdin.
    Batch {
        input: Option<PathBuf>,
    },
    Schema {
        #[command(subcommand)]
        action: SchemaAction,
    },
    Trace {
        #[command(subcommand)]
        action: TraceAction,
    },
}

#[derive(Debug, Subcommand)]
pub enum SchemaAction {
    /// Print the JSON Schema for selectors or bundles.
    Export {
        #[arg(value_parser = parse_kind)]
        kind: SchemaKind,
    },
    /// Validate JSON or JSON-lines documents ("-" reads stdin).
    Validate {
        #[arg(value_parser = parse_kind)]
        kind: SchemaKind,
        file: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum TraceAction {
    /// Re-run a recorded session and compare every bundle.
    Replay { file: PathBuf },
}

fn parse_indexing(s: &str) -> Result<IndexingMode, String> {
    s.parse().map_err(|e: LanserError| e.message)
}

fn parse_kind(s: &str) -> Result<SchemaKind, String> {
    s.parse()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Human,
    Json,
    Canonical,
}

pub fn format_bundle(b: &AnalysisBundle, format: Format) -> String {
    match format {
        Format::Human => render::render_human(b),
        Format::Json => format!("{}\n", serde_json::to_string(&b.to_value()).expect("bundle serializes")),
        Format::Canonical => format!("{}\n", String::from_utf8(b.canonical_bytes()).expect("JCS is UTF-8")),
    }
}

impl GlobalArgs {
    fn format(&self) -> Format {
        if self.canonical {
            Format::Canonical
        } else if self.json {
            Format::Json
        } else {
            Format::Human
        }
    }

    pub fn options(&self) -> CommandOptions {
        CommandOptions {
            index_io: self.index_io,
            deny_apply_on_ambiguous: self.deny_apply_on_ambiguous,
            workspace_jail: self.workspace_jail,
            allow_paths: self.allow_path.clone(),
            deny_paths: self.deny_path.clone(),
            allow_dirty: self.allow_dirty,
        }
    }

    pub fn settings(&self) -> Result<Settings, LanserError> {
        let raw = self.server_cmd.as_deref().unwrap_or(DEFAULT_SERVER);
        let argv = shlex::split(raw)
            .filter(|a| !a.is_empty())
            .ok_or_else(|| LanserError::new(ErrorCode::LsCrash, format!("cannot parse server command '{raw}'")))?;
        let mut s = Settings::new(&self.root, argv);
        s.request_timeout = Duration::from_millis(self.timeout_ms);
        if !self.include.is_empty() {
            s.tracking.include = self.include.clone();
        }
        s.execution = if self.sequential {
            Execution::Sequential
        } else {
            Execution::Auto
        };
        s.verbose = self.verbose;
        s.trace_file = self.trace_file.clone();
        Ok(s)
    }
}

fn error_bundle(cmd: &str, args: Option<Value>, error: LanserError) -> AnalysisBundle {
    let mut parts = BundleParts::new(cmd);
    parts.args = args;
    parts.error = Some(error);
    build(parts)
}

fn emit(out: &mut impl Write, text: &str) {
    let _ = out.write_all(text.as_bytes());
    let _ = out.flush();
}

/// Parses `args` and runs the command; returns the process exit status.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let g = &cli.global;
    let format = g.format();

    let request = match &cli.command {
        Command::Def { selector } => CommandRequest::new(Cmd::Def, selector),
        Command::Refs {
            selector,
            after,
            page_size,
        } => CommandRequest {
            after: after.clone(),
            page_size: *page_size,
            ..CommandRequest::new(Cmd::Refs, selector)
        },
        Command::Hover { selector } => CommandRequest::new(Cmd::Hover, selector),
        Command::Symbols { target } => CommandRequest::new(Cmd::Symbols, target),
        Command::Diag { selector } => CommandRequest::new(Cmd::Diag, selector),
        Command::Locate { selector } => CommandRequest::new(Cmd::Locate, selector),
        Command::PrepareRename { selector } => CommandRequest::new(Cmd::PrepareRename, selector),
        Command::Rename {
            selector,
            new_name,
            apply,
            ..
        } => CommandRequest {
            new_name: Some(new_name.clone()),
            mode: Some(if *apply { Mode::Apply } else { Mode::DryRun }),
            ..CommandRequest::new(Cmd::Rename, selector)
        },
        Command::Batch { input } => return batch(g, input.as_deref(), &mut out),
        Command::Schema { action } => return schema_command(action, &mut out),
        Command::Trace {
            action: TraceAction::Replay { file },
        } => return replay_command(g, file, &mut out),
    };

    let settings = match g.settings() {
        Ok(s) => s,
        Err(e) => {
            let b = error_bundle(request.cmd.as_str(), request.args(), e);
            emit(&mut out, &format_bundle(&b, format));
            return b.exit_code();
        }
    };
    let mut runner = Runner::new(settings);
    let bundle = runner.execute(&request, &g.options());
    emit(&mut out, &format_bundle(&bundle, format));
    let mut code = bundle.exit_code();
    if let Err(e) = runner.finish() {
        eprintln!("lanser: {e}");
        if code == 0 {
            code = e.code.exit_code();
        }
    }
    code
}

fn read_input(path: Option<&std::path::Path>) -> io::Result<String> {
    match path {
        Some(p) if p != std::path::Path::new("-") => std::fs::read_to_string(p),
        _ => io::read_to_string(io::stdin().lock()),
    }
}

/// Runs one request per input line over a single session. Output is one
/// JSON bundle per line; the exit status is the first non-zero one.
fn batch(g: &GlobalArgs, input: Option<&std::path::Path>, out: &mut impl Write) -> i32 {
    let format = if g.canonical { Format::Canonical } else { Format::Json };
    let text = match read_input(input) {
        Ok(t) => t,
        Err(e) => {
            let b = error_bundle("batch", None, LanserError::fs(e, "reading batch input"));
            emit(out, &format_bundle(&b, format));
            return b.exit_code();
        }
    };
    let settings = match g.settings() {
        Ok(s) => s,
        Err(e) => {
            let b = error_bundle("batch", None, e);
            emit(out, &format_bundle(&b, format));
            return b.exit_code();
        }
    };
    let opts = g.options();
    let mut runner = Runner::new(settings);
    let mut first = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bundle = match serde_json::from_str::<CommandRequest>(line) {
            Ok(req) => runner.execute(&req, &opts),
            Err(e) => error_bundle(
                "batch",
                Some(json!({ "line": i + 1 })),
                LanserError::new(ErrorCode::BadSelectorSyntax, format!("batch line {}: {e}", i + 1)),
            ),
        };
        emit(out, &format_bundle(&bundle, format));
        if first == 0 {
            first = bundle.exit_code();
        }
    }
    if let Err(e) = runner.finish() {
        eprintln!("lanser: {e}");
        if first == 0 {
            first = e.code.exit_code();
        }
    }
    first
}

fn schema_command(action: &SchemaAction, out: &mut impl Write) -> i32 {
    match action {
        SchemaAction::Export { kind } => {
            let text = serde_json::to_string_pretty(&schema::export(*kind)).expect("schema serializes");
            emit(out, &format!("{text}\n"));
            0
        }
        SchemaAction::Validate { kind, file } => {
            let text = match read_input(Some(file)) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("lanser: reading {}: {e}", file.display());
                    return ErrorCode::FsPermissions.exit_code();
                }
            };
            let docs: Vec<String> = match serde_json::from_str::<Value>(&text) {
                Ok(_) => vec![text.trim().to_string()],
                Err(_) => text
                    .lines()
                    .filter(|l| !l.trim().is_empty())
                    .map(str::to_string)
                    .collect(),
            };
            let mut failed = 0;
            for (i, doc) in docs.iter().enumerate() {
                let violations = match kind {
                    SchemaKind::Bundles => validate_bundle(doc.as_bytes()).err().unwrap_or_default(),
                    SchemaKind::Selectors => match serde_json::from_str::<Value>(doc) {
                        Ok(v) => schema::validate(&schema::selector_schema(), &v),
                        Err(e) => vec![format!("not a JSON document: {e}")],
                    },
                };
                if violations.is_empty() {
                    emit(out, &format!("document {}: ok\n", i + 1));
                } else {
                    failed += 1;
                    for v in violations {
                        emit(out, &format!("document {}: {v}\n", i + 1));
                    }
                }
            }
            if failed == 0 {
                0
            } else {
                ErrorCode::Internal.exit_code()
            }
        }
    }
}

fn replay_command(g: &GlobalArgs, file: &std::path::Path, out: &mut impl Write) -> i32 {
    let format = if g.canonical { Format::Canonical } else { Format::Json };
    let mut settings = match g.settings() {
        Ok(s) => s,
        Err(_) => Settings::new(&g.root, Vec::new()),
    };
    settings.verbose = false;
    let outcome = replay::replay(file, settings);
    for b in &outcome.bundles {
        emit(out, &format_bundle(b, format));
    }
    match outcome.error {
        None => 0,
        Some(e) => {
            let b = error_bundle("trace-replay", Some(json!({ "trace": file.display().to_string() })), e);
            emit(out, &format_bundle(&b, format));
            b.exit_code()
        }
    }
}
