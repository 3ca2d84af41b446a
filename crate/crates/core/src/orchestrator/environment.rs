//! Environment capture for bundles and trace headers.

use crate::bundle::{EnvironmentCapture, ServerInfo};
use crate::jcs;
use crate::selector::IndexingMode;
use crate::workspace::digest_bytes;
use serde_json::{json, Map, Value};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;

/// Project configuration files whose content feeds the config digest.
pub const CONFIG_FILES: [&str; 4] = ["pyrightconfig.json", "pyproject.toml", "setup.cfg", "mypy.ini"];

fn file_digest(path: &Path) -> Option<String> {
    std::fs::read(path).ok().map(|b| digest_bytes(&b))
}

/// Digest over everything besides tracked sources that can change server
/// answers: the server command (and the bytes of any files it names),
/// initialization options and project configuration files.
pub fn config_digest(server_command: &[String], root: &Path, initialization_options: &Value) -> String {
    let mut argv_files = Map::new();
    for arg in server_command {
        let p = Path::new(arg);
        let p = if p.is_absolute() { p.to_path_buf() } else { root.join(p) };
        if p.is_file() {
            if let Some(d) = file_digest(&p) {
                argv_files.insert(arg.clone(), json!(d));
            }
        }
    }
    let configs: Map<String, Value> = CONFIG_FILES
        .iter()
        .map(|name| (name.to_string(), json!(file_digest(&root.join(name)))))
        .collect();
    jcs::sha256_of(&json!({
        "argv": server_command,
        "argvFiles": argv_files,
        "initializationOptions": initialization_options,
        "configFiles": configs,
    }))
    .expect("config values are JSON")
}

#[derive(Debug, Clone, Default)]
struct PythonInfo {
    exe: Option<String>,
    version: Option<String>,
}

fn find_on_path(name: &str) -> Option<PathBuf> {
    let path = std::env::var_os("PATH")?;
    std::env::split_paths(&path).map(|d| d.join(name)).find(|p| p.is_file())
}

fn python() -> &'static PythonInfo {
    static INFO: OnceLock<PythonInfo> = OnceLock::new();
    INFO.get_or_init(|| {
        let exe = std::env::var_os("LANSER_PYTHON")
            .map(PathBuf::from)
            .or_else(|| find_on_path("python3"))
            .or_else(|| find_on_path("python"));
        let Some(exe) = exe else { return PythonInfo::default() };
        let version = Command::new(&exe).arg("--version").output().ok().and_then(|o| {
            let text = if o.stdout.is_empty() { o.stderr } else { o.stdout };
            let text = String::from_utf8_lossy(&text);
            text.trim().strip_prefix("Python ").map(str::to_string)
        });
        PythonInfo {
            exe: Some(exe.display().to_string()),
            version,
        }
    })
}

pub fn platform() -> String {
    format!("{}-{}", std::env::consts::OS, std::env::consts::ARCH)
}

pub fn capture(server: ServerInfo, encoding: IndexingMode, config_digest: &str) -> EnvironmentCapture {
    let py = python();
    EnvironmentCapture {
        server,
        position_encoding: encoding,
        python_exe: py.exe.clone(),
        python_version: py.version.clone(),
        venv_path: std::env::var("VIRTUAL_ENV").ok().filter(|v| !v.is_empty()),
        config_digest: config_digest.to_string(),
        platform: platform(),
    }
}
