//! Append-only request/response log and a backend that serves from it.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{BackendReply, ChatBackend, CompletionRequest, CompletionResult, GatewayError};
use crate::util::{read_jsonl, JsonlError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub request_hash: String,
    pub request: CompletionRequest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<CompletionResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Unix time in milliseconds.
    pub ts: u64,
}

/// Writer side of the log. Each call appends one JSON line.
#[derive(Debug)]
pub struct ReplayLog {
    path: PathBuf,
    writer: Mutex<BufWriter<File>>,
}

impl ReplayLog {
    pub fn append_to(path: &Path) -> std::io::Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            path: path.to_path_buf(),
            writer: Mutex::new(BufWriter::new(file)),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(
        &self,
        request: &CompletionRequest,
        result: &Result<CompletionResult, GatewayError>,
    ) -> std::io::Result<()> {
        let ts = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        let entry = ReplayEntry {
            request_hash: request.hash(),
            request: request.clone(),
            response: result.as_ref().ok().cloned(),
            error: result.as_ref().err().map(|e| e.to_string()),
            ts,
        };
        let line = serde_json::to_string(&entry).map_err(std::io::Error::other)?;
        let mut writer = self.writer.lock().expect("replay log lock");
        writer.write_all(line.as_bytes())?;
        writer.write_all(b"\n")?;
        writer.flush()
    }
}

/// Serves responses recorded in a replay log, keyed by request hash.
/// Never touches the network.
#[derive(Debug, Clone, Default)]
pub struct ReplayBackend {
    entries: HashMap<String, ReplayEntry>,
}

impl ReplayBackend {
    pub fn load(path: &Path) -> Result<Self, JsonlError> {
        Ok(Self::from_entries(read_jsonl(path)?))
    }

    /// Later entries for the same hash override earlier ones, except that a
    /// recorded success is never replaced by a recorded error.
    pub fn from_entries(entries: Vec<ReplayEntry>) -> Self {
        let mut map: HashMap<String, ReplayEntry> = HashMap::new();
        for entry in entries {
            let keep_existing = map
                .get(&entry.request_hash)
                .is_some_and(|old| old.response.is_some() && entry.response.is_none());
            if !keep_existing {
                map.insert(entry.request_hash.clone(), entry);
            }
        }
        Self { entries: map }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl ChatBackend for ReplayBackend {
    fn chat(&self, request: &CompletionRequest) -> Result<BackendReply, GatewayError> {
        let hash = request.hash();
        let entry = self
            .entries
            .get(&hash)
            .ok_or(GatewayError::ReplayMiss(hash))?;
        match (&entry.response, &entry.error) {
            (Some(res), _) => Ok(BackendReply {
                text: res.text.clone(),
                finish_reason: res.finish_reason.clone(),
                usage: res.usage,
            }),
            (None, Some(err)) => Err(GatewayError::Backend(format!("replayed: {err}"))),
            (None, None) => Err(GatewayError::Protocol(
                "replay entry has no response".into(),
            )),
        }
    }
}
