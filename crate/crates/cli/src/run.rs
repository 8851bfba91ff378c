//! Run directories, manifests, input snapshots and model backends.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::Context;
use reflect_core::config::{api_key_from_env, EndpointConfig};
use reflect_core::gateway::{ReplayBackend, ReplayLog, ScriptedBackend};
use reflect_core::util::sha256_hex;
use reflect_core::{Config, Gateway};
use serde_json::{json, Value};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const REPLAY_FILE: &str = "replay.jsonl";
pub const INPUTS_DIR: &str = "inputs";

/// Failure split by exit code: 1 for bad input or configuration, 2 for
/// everything else.
#[derive(Debug)]
pub enum CliError {
    User(anyhow::Error),
    Internal(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Internal(e)
    }
}

pub fn user(e: impl Into<anyhow::Error>) -> CliError {
    CliError::User(e.into())
}

pub fn internal(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Internal(e.into())
}

pub type CliResult<T> = Result<T, CliError>;

/// Where chat completions come from.
#[derive(Debug, Clone)]
pub enum Source {
    Endpoint,
    /// Scripted mock loaded from a JSON file.
    Mock(PathBuf),
    /// Recorded replies only; no network.
    Replay(PathBuf),
}

/// One command invocation writing into `out`.
pub struct Run {
    pub out: PathBuf,
    pub config: Config,
    pub source: Source,
    command: String,
    argv: Vec<String>,
    started: Instant,
    started_ms: u128,
    inputs: BTreeMap<String, Value>,
    log: Option<Arc<ReplayLog>>,
    replayed_from: Option<PathBuf>,
}

impl Run {
    pub fn new(
        command: &str,
        argv: Vec<String>,
        out: PathBuf,
        config: Config,
        source: Source,
    ) -> CliResult<Self> {
        std::fs::create_dir_all(&out)
            .with_context(|| format!("cannot create output directory {}", out.display()))
            .map_err(user)?;
        Ok(Self {
            out,
            config,
            source,
            command: command.to_string(),
            argv,
            started: Instant::now(),
            started_ms: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis())
                .unwrap_or(0),
            inputs: BTreeMap::new(),
            log: None,
            replayed_from: None,
        })
    }

    pub fn mark_replay(&mut self, from: &Path) {
        self.replayed_from = Some(from.to_path_buf());
    }

    /// Copies an input file (or the files of an input directory) into the
    /// run directory so the run can be replayed from the directory alone.
    pub fn snapshot_input(&mut self, name: &str, path: &Path) -> CliResult<()> {
        let dest = self.out.join(INPUTS_DIR).join(name);
        let mut files = BTreeMap::new();
        if path.is_dir() {
            std::fs::create_dir_all(&dest).map_err(internal)?;
            let mut entries: Vec<_> = std::fs::read_dir(path)
                .with_context(|| format!("cannot read {}", path.display()))
                .map_err(user)?
                .filter_map(Result::ok)
                .map(|e| e.path())
                .filter(|p| p.is_file())
                .collect();
            entries.sort();
            for file in entries {
                let fname = file
                    .file_name()
                    .unwrap_or_default()
                    .to_string_lossy()
                    .to_string();
                let bytes = read_input(&file)?;
                std::fs::write(dest.join(&fname), &bytes).map_err(internal)?;
                files.insert(fname, json!(sha256_hex(&bytes)));
            }
        } else {
            let bytes = read_input(path)?;
            if let Some(parent) = dest.parent() {
                std::fs::create_dir_all(parent).map_err(internal)?;
            }
            std::fs::write(&dest, &bytes).map_err(internal)?;
            files.insert(String::new(), json!(sha256_hex(&bytes)));
        }
        self.inputs.insert(
            name.to_string(),
            json!({"source": path.display().to_string(), "snapshot": format!("{INPUTS_DIR}/{name}"), "sha256": files}),
        );
        Ok(())
    }

    fn replay_log(&mut self) -> CliResult<Arc<ReplayLog>> {
        if let Some(log) = &self.log {
            return Ok(log.clone());
        }
        let path = self.out.join(REPLAY_FILE);
        // A rerun into the same directory starts a fresh log.
        if path.exists() {
            std::fs::remove_file(&path).map_err(internal)?;
        }
        let log = Arc::new(ReplayLog::append_to(&path).map_err(internal)?);
        self.log = Some(log.clone());
        Ok(log)
    }

    /// Gateway for a config table; every call is appended to the run's
    /// replay log.
    pub fn gateway(
        &mut self,
        section: &'static str,
        endpoint: &EndpointConfig,
    ) -> CliResult<Gateway> {
        let log = self.replay_log()?;
        let gateway = match &self.source {
            Source::Endpoint => endpoint
                .http_gateway(section, api_key_from_env())
                .map_err(user)?,
            Source::Mock(path) => {
                let text = String::from_utf8(read_input(path)?)
                    .with_context(|| format!("{} is not UTF-8", path.display()))
                    .map_err(user)?;
                let backend = ScriptedBackend::from_json(&text)
                    .with_context(|| format!("invalid mock script {}", path.display()))
                    .map_err(user)?;
                endpoint.wrap(Gateway::new(backend))
            }
            Source::Replay(path) => {
                let backend = ReplayBackend::load(path)
                    .with_context(|| format!("cannot load replay log {}", path.display()))
                    .map_err(user)?;
                endpoint.wrap(Gateway::new(backend))
            }
        };
        Ok(gateway.with_replay_log(log))
    }

    pub fn generator(&mut self) -> CliResult<Gateway> {
        let endpoint = self.config.endpoint.clone();
        self.gateway("endpoint", &endpoint)
    }

    pub fn judge(&mut self) -> CliResult<Gateway> {
        let endpoint = self.config.judge_endpoint().clone();
        let section = if self.config.judge.base_url.is_some() {
            "judge"
        } else {
            "endpoint"
        };
        self.gateway(section, &endpoint)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn write_json(&self, name: &str, value: &impl serde::Serialize) -> CliResult<PathBuf> {
        let path = self.path(name);
        let text = serde_json::to_string_pretty(value).map_err(internal)?;
        std::fs::write(&path, text + "\n")
            .with_context(|| format!("cannot write {}", path.display()))
            .map_err(internal)?;
        Ok(path)
    }

    pub fn write_text(&self, name: &str, text: &str) -> CliResult<PathBuf> {
        let path = self.path(name);
        std::fs::write(&path, text)
            .with_context(|| format!("cannot write {}", path.display()))
            .map_err(internal)?;
        Ok(path)
    }

    /// Writes `manifest.json` with the effective config, seeds, inputs,
    /// outputs, counts and timing.
    pub fn finish(self, outputs: &[&str], counts: Value) -> CliResult<()> {
        let manifest = json!({
            "tool_version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "argv": self.argv,
            "config": self.config,
            "config_hash": self.config.hash(),
            "seeds": {
                "generation": self.config.policy.seed,
                "curation": self.config.curation.seed,
            },
            "source": match &self.source {
                Source::Endpoint => json!("endpoint"),
                Source::Mock(p) => json!({"mock": p.display().to_string()}),
                Source::Replay(p) => json!({"replay": p.display().to_string()}),
            },
            "replayed_from": self.replayed_from.as_ref().map(|p| p.display().to_string()),
            "replay_log": self.log.as_ref().map(|_| REPLAY_FILE),
            "inputs": self.inputs,
            "outputs": outputs,
            "counts": counts,
            "timings": {
                "started_unix_ms": self.started_ms as u64,
                "elapsed_ms": self.started.elapsed().as_millis() as u64,
            },
        });
        self.write_json(MANIFEST_FILE, &manifest)?;
        Ok(())
    }
}

pub fn read_input(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path)
        .with_context(|| format!("cannot read input {}", path.display()))
        .map_err(user)
}
