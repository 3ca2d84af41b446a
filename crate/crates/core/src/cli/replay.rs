//! Re-executes a recorded session against its own recording and checks
//! that every bundle comes out the same.

use super::request::{CommandOptions, CommandRequest};
use super::runner::{Runner, Settings};
use crate::bundle::{stable_digest, AnalysisBundle};
use crate::error::{ErrorCode, LanserError};
use crate::orchestrator::environment::config_digest;
use crate::trace::{ReplayLauncher, TraceLog};
use crate::workspace::WorkspaceSnapshot;
use serde::Deserialize;
use serde_json::{json, Value};
use std::path::Path;

#[derive(Deserialize)]
struct CommandEvent {
    request: CommandRequest,
    options: CommandOptions,
}

pub struct ReplayOutcome {
    pub bundles: Vec<AnalysisBundle>,
    pub error: Option<LanserError>,
}

fn mismatch(msg: impl Into<String>) -> LanserError {
    LanserError::new(ErrorCode::ReplayMismatch, msg)
}

/// Replays `trace` in the workspace at `settings.root`. The recorded server
/// command and environment replace the ones in `settings`.
pub fn replay(trace: &Path, mut settings: Settings) -> ReplayOutcome {
    let mut bundles = Vec::new();
    let error = run(trace, &mut settings, &mut bundles).err();
    ReplayOutcome { bundles, error }
}

fn run(trace: &Path, settings: &mut Settings, bundles: &mut Vec<AnalysisBundle>) -> Result<(), LanserError> {
    let log = TraceLog::read(trace)?;
    let commands = log.events("command");
    let recorded = log.events("bundle");
    if commands.is_empty() {
        return Ok(());
    }
    settings.server_command = log.header.server_command.clone();
    settings.trace_file = None;
    let config = settings.session_config().validated()?;
    let digest = config_digest(
        &config.server_command,
        &config.workspace_root,
        &config.initialization_options,
    );
    let snapshot = WorkspaceSnapshot::take(&config.workspace_root, &config.tracking, &digest, config.execution)?;
    if let Some(want) = &log.header.workspace_digest {
        let got = snapshot.digest();
        if *want != got {
            return Err(
                mismatch(format!("workspace digest differs: recorded {want}, current {got}"))
                    .with_details(json!({ "recorded": want, "current": got })),
            );
        }
    }

    let launcher = ReplayLauncher::new(&log);
    let mut runner = Runner::replaying(
        settings.clone(),
        launcher.clone(),
        log.header.environment.clone(),
        snapshot,
    );
    for (i, event) in commands.iter().enumerate() {
        let ev: CommandEvent = serde_json::from_value((*event).clone())
            .map_err(|e| mismatch(format!("command event {} is malformed: {e}", i + 1)))?;
        let bundle = runner.execute(&ev.request, &ev.options);
        if let Some(m) = launcher.mismatch() {
            bundles.push(bundle);
            return Err(mismatch(m));
        }
        let want = recorded.get(i).and_then(|b| b.get("digest")).and_then(Value::as_str);
        let got = stable_digest(&bundle);
        bundles.push(bundle);
        if want != Some(got.as_str()) {
            return Err(mismatch(format!("bundle {} differs from the recording", i + 1))
                .with_details(json!({ "index": i + 1, "recorded": want, "replayed": got })));
        }
    }
    let finished = runner.finish();
    if let Some(m) = launcher.mismatch() {
        return Err(mismatch(m));
    }
    finished
}
