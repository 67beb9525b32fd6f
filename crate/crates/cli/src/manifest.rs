use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::files::write_json;

/// Record of one subcommand run: what went in, what came out, and how long
/// each stage took.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    /// Effective configuration with every default filled in.
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, PathBuf>,
    pub outputs: BTreeMap<String, PathBuf>,
    pub wall_times_secs: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            tool: "burstlab".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed: None,
            threads: None,
            config: serde_json::Value::Null,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            wall_times_secs: BTreeMap::new(),
        }
    }

    pub fn config<T: Serialize>(&mut self, cfg: &T) -> CliResult<()> {
        self.config = serde_json::to_value(cfg).map_err(|e| CliError::Io(format!("config snapshot: {e}")))?;
        Ok(())
    }

    pub fn input(&mut self, name: &str, path: &Path) {
        self.inputs.insert(name.into(), path.to_path_buf());
    }

    pub fn output(&mut self, name: &str, path: PathBuf) {
        self.outputs.insert(name.into(), path);
    }

    /// Runs `stage` and records its wall time under `name`.
    pub fn timed<T>(&mut self, name: &str, stage: impl FnOnce() -> CliResult<T>) -> CliResult<T> {
        let start = Instant::now();
        let out = stage();
        self.wall_times_secs.insert(name.into(), start.elapsed().as_secs_f64());
        out
    }

    /// Writes the manifest to `path` and lists it among its own outputs.
    pub fn finish(mut self, path: &Path) -> CliResult<Self> {
        self.output("manifest", path.to_path_buf());
        write_json(path, &self)?;
        Ok(self)
    }
}

/// `<out>.manifest.json` next to a single-file output.
pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}
