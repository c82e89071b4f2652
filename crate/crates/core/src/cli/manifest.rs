use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::io::write_json;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timestamps {
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
}

/// Written once per artifact-producing command, next to its outputs.
///
/// Output paths are relative to the manifest's directory. `timestamps` is the
/// only wall-clock field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub version: String,
    pub outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub results: serde_json::Value,
    pub timestamps: Timestamps,
}

pub fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn new(command: &str, config: &impl Serialize, seed: u64, started_unix_ms: u128) -> Self {
        Self {
            command: command.to_string(),
            config: serde_json::to_value(config).expect("config serializes"),
            seed,
            version: crate::VERSION.to_string(),
            outputs: Vec::new(),
            results: serde_json::Value::Null,
            timestamps: Timestamps {
                started_unix_ms,
                finished_unix_ms: started_unix_ms,
            },
        }
    }

    pub fn output(&mut self, name: impl Into<String>) {
        self.outputs.push(name.into());
    }

    pub fn write(mut self, out_dir: &Path) -> Result<()> {
        self.timestamps.finished_unix_ms = now_ms();
        write_json(&out_dir.join(MANIFEST_FILE), &self)
    }
}
