use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use serde::Serialize;
use serde_json::{Map, Value};

/// Record of one invocation, written next to its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool_version: &'static str,
    pub subcommand: &'static str,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub overrides: Map<String, Value>,
    pub seed: Option<u64>,
    /// Records consumed (traces) or produced (simulate).
    pub records: Option<usize>,
    pub exit_status: i32,
    pub wall_time_s: f64,
}

impl RunManifest {
    pub fn new(subcommand: &'static str) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION"),
            subcommand,
            inputs: Vec::new(),
            outputs: Vec::new(),
            overrides: Map::new(),
            seed: None,
            records: None,
            exit_status: 0,
            wall_time_s: 0.0,
        }
    }

    pub fn input(&mut self, p: impl AsRef<Path>) {
        self.inputs.push(p.as_ref().display().to_string());
    }

    pub fn output(&mut self, p: impl AsRef<Path>) {
        self.outputs.push(p.as_ref().display().to_string());
    }

    pub fn set(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).expect("override serializes");
        self.overrides.insert(key.to_string(), v);
    }

    pub fn write(mut self, path: &Path, started: Instant) -> anyhow::Result<()> {
        self.wall_time_s = started.elapsed().as_secs_f64();
        let text = serde_json::to_string_pretty(&self)? + "\n";
        std::fs::write(path, text).with_context(|| format!("writing manifest {}", path.display()))
    }
}

/// `<file>.manifest.json` beside `anchor`, or `<file>.<suffix>.manifest.json`.
pub fn default_path(anchor: &Path, suffix: Option<&str>) -> PathBuf {
    let mut name = anchor
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "helmx".into());
    if let Some(s) = suffix {
        name.push('.');
        name.push_str(s);
    }
    name.push_str(".manifest.json");
    anchor.with_file_name(name)
}
