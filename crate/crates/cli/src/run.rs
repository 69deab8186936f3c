//! Output-root bookkeeping and `run.json`.

use std::fs;
use std::path::{Path, PathBuf};

use sbde::dataio::DatasetManifest;
use serde::Serialize;

use crate::backends::BackendInfo;
use crate::config::RunConfig;
use crate::error::{input, runtime, CliError};

pub struct RunContext {
    pub cfg: RunConfig,
    pub root: PathBuf,
    command: String,
    argv: Vec<String>,
    backends: Vec<BackendInfo>,
    artifacts: Vec<String>,
}

#[derive(Serialize)]
struct RunRecord<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    argv: &'a [String],
    config: &'a RunConfig,
    config_hash: String,
    seed: u64,
    backends: &'a [BackendInfo],
    artifacts: &'a [String],
    failures: usize,
    exit_code: u8,
}

impl RunContext {
    pub fn new(cfg: RunConfig, command: &str, argv: Vec<String>) -> Result<Self, CliError> {
        let root = std::path::absolute(&cfg.output_root).map_err(input)?;
        fs::create_dir_all(&root).map_err(|e| CliError::Input(format!("{}: {e}", root.display())))?;
        Ok(Self { cfg, root, command: command.to_string(), argv, backends: Vec::new(), artifacts: Vec::new() })
    }

    pub fn backend(&mut self, info: BackendInfo) {
        self.backends.push(info);
    }

    /// Record a written file, relative to the root when inside it.
    pub fn artifact(&mut self, path: &Path) {
        let shown = path.strip_prefix(&self.root).unwrap_or(path);
        self.artifacts.push(shown.to_string_lossy().into_owned());
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<PathBuf, CliError> {
        let path = self.path(rel);
        let text = serde_json::to_string_pretty(value).map_err(runtime)?;
        fs::write(&path, text + "\n").map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        self.artifact(&path);
        Ok(path)
    }

    pub fn write_text(&mut self, rel: &str, text: &str) -> Result<PathBuf, CliError> {
        let path = self.path(rel);
        fs::write(&path, text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        self.artifact(&path);
        Ok(path)
    }

    pub fn write_manifest(&mut self, rel: &str, m: &DatasetManifest) -> Result<PathBuf, CliError> {
        let path = self.path(rel);
        m.save(&path).map_err(runtime)?;
        self.artifact(&path);
        Ok(path)
    }

    pub fn finish(&self, failures: usize, exit_code: u8) -> Result<(), CliError> {
        let record = RunRecord {
            tool: "sbde",
            version: env!("CARGO_PKG_VERSION"),
            command: &self.command,
            argv: &self.argv,
            config: &self.cfg,
            config_hash: self.cfg.hash(),
            seed: self.cfg.seed,
            backends: &self.backends,
            artifacts: &self.artifacts,
            failures,
            exit_code,
        };
        let path = self.path("run.json");
        let text = serde_json::to_string_pretty(&record).map_err(runtime)?;
        fs::write(&path, text + "\n").map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
    }
}
