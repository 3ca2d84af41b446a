//! One command invocation, in the form batch lines and trace events use.

use crate::edits::{Mode, SafetyPolicy};
use crate::selector::IndexingMode;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Cmd {
    Def,
    Refs,
    Hover,
    Symbols,
    Diag,
    Locate,
    PrepareRename,
    Rename,
}

impl Cmd {
    pub fn as_str(self) -> &'static str {
        match self {
            Cmd::Def => "def",
            Cmd::Refs => "refs",
            Cmd::Hover => "hover",
            Cmd::Symbols => "symbols",
            Cmd::Diag => "diag",
            Cmd::Locate => "locate",
            Cmd::PrepareRename => "prepare-rename",
            Cmd::Rename => "rename",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandRequest {
    pub cmd: Cmd,
    /// Selector text, or a structured selector object.
    pub selector: Value,
    #[serde(rename = "newName", default, skip_serializing_if = "Option::is_none")]
    pub new_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub after: Option<String>,
    #[serde(rename = "pageSize", default, skip_serializing_if = "Option::is_none")]
    pub page_size: Option<usize>,
}

impl CommandRequest {
    /// A request from command-line text; text starting with `{` is read as
    /// a structured selector.
    pub fn new(cmd: Cmd, selector: &str) -> Self {
        let selector = match selector.trim_start().starts_with('{') {
            true => serde_json::from_str(selector).unwrap_or_else(|_| Value::String(selector.into())),
            false => Value::String(selector.into()),
        };
        CommandRequest {
            cmd,
            selector,
            new_name: None,
            mode: None,
            after: None,
            page_size: None,
        }
    }

    /// `request.args` of the bundle; `None` when the command takes none.
    pub fn args(&self) -> Option<Value> {
        let mut args = Map::new();
        if let Some(n) = &self.new_name {
            args.insert("newName".into(), json!(n));
        }
        if self.cmd == Cmd::Rename {
            args.insert("mode".into(), json!(self.mode.unwrap_or(Mode::DryRun)));
        }
        if let Some(a) = &self.after {
            args.insert("after".into(), json!(a));
        }
        if let Some(p) = self.page_size {
            args.insert("pageSize".into(), json!(p));
        }
        (!args.is_empty()).then_some(Value::Object(args))
    }
}

/// Global flags that change what a command computes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CommandOptions {
    pub index_io: IndexingMode,
    pub deny_apply_on_ambiguous: bool,
    pub workspace_jail: bool,
    pub allow_paths: Vec<String>,
    pub deny_paths: Vec<String>,
    pub allow_dirty: bool,
}

impl Default for CommandOptions {
    fn default() -> Self {
        CommandOptions {
            index_io: IndexingMode::Utf16,
            deny_apply_on_ambiguous: false,
            workspace_jail: true,
            allow_paths: Vec::new(),
            deny_paths: Vec::new(),
            allow_dirty: false,
        }
    }
}

impl CommandOptions {
    pub fn policy(&self) -> SafetyPolicy {
        SafetyPolicy {
            workspace_jail: self.workspace_jail,
            allow_paths: self.allow_paths.clone(),
            deny_paths: self.deny_paths.clone(),
            allow_dirty: self.allow_dirty,
            deny_apply_on_ambiguous: self.deny_apply_on_ambiguous,
        }
    }
}
