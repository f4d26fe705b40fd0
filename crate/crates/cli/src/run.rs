//! Exit codes, config loading and run manifests shared by all commands.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::de::DeserializeOwned;
use serde::Serialize;
use vquant::VqError;

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_FORMAT: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: message.into() }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        Self { code: EXIT_NUMERIC, message: message.into() }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<VqError> for Failure {
    fn from(e: VqError) -> Self {
        let code = match e {
            VqError::Argument(_)
            | VqError::Parameter(_)
            | VqError::Config(_)
            | VqError::Mode(_)
            | VqError::Schedule(_)
            | VqError::Plan(_) => EXIT_USAGE,
            VqError::Format(_) | VqError::Encoding(_) | VqError::Dimension(_) | VqError::Io(_) => EXIT_FORMAT,
            VqError::Numeric(_) | VqError::State(_) => EXIT_NUMERIC,
        };
        Self { code, message: e.to_string() }
    }
}

pub type CmdResult<T = ()> = Result<T, Failure>;

/// Reads a JSON config, or returns the defaults when no path is given.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> CmdResult<T> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::usage(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::usage(format!("bad config {}: {e}", path.display())))
}

/// Copies every `Some` flag over the matching config field.
macro_rules! overlay {
    ($job:expr, $args:expr; $($field:ident),+ $(,)?) => {
        $( if let Some(v) = $args.$field.clone() { $job.$field = v.into(); } )+
    };
}
pub(crate) use overlay;

pub fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure { code: EXIT_FORMAT, message: format!("{}: {e}", path.display()) }
}

pub fn create_dir(dir: &Path) -> CmdResult {
    fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

pub fn write_text(path: &Path, text: &str) -> CmdResult {
    fs::write(path, text).map_err(|e| io_failure(path, e))
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub version: String,
    pub started_at: String,
    pub finished_at: String,
    pub outputs: Vec<String>,
}

/// Tracks one command invocation and the files it writes.
pub struct Run {
    command: &'static str,
    seed: u64,
    started_at: String,
    outputs: Vec<PathBuf>,
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl Run {
    pub fn start(command: &'static str, seed: u64) -> Self {
        Self { command, seed, started_at: now(), outputs: Vec::new() }
    }

    pub fn write(&mut self, path: PathBuf, text: &str) -> CmdResult {
        write_text(&path, text)?;
        self.outputs.push(path);
        Ok(())
    }

    pub fn record(&mut self, path: PathBuf) {
        self.outputs.push(path);
    }

    /// Writes the manifest to `path`, listing it last among the outputs.
    pub fn finish<C: Serialize>(mut self, config: &C, path: &Path) -> CmdResult {
        self.outputs.push(path.to_path_buf());
        let manifest = RunManifest {
            command: self.command.to_string(),
            config: serde_json::to_value(config).expect("configs serialize"),
            seed: self.seed,
            version: vquant::VERSION.to_string(),
            started_at: self.started_at,
            finished_at: now(),
            outputs: self.outputs.iter().map(|p| p.display().to_string()).collect(),
        };
        write_text(path, &to_json(&manifest))
    }
}
