use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

/// One line of the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub config: serde_json::Value,
    pub results: serde_json::Value,
    pub duration_secs: f64,
    pub version: String,
}

impl RunRecord {
    pub fn new(
        command: &str,
        config: impl Serialize,
        results: impl Serialize,
        duration: std::time::Duration,
    ) -> Result<Self> {
        Ok(Self {
            command: command.to_string(),
            config: serde_json::to_value(config)?,
            results: serde_json::to_value(results)?,
            duration_secs: duration.as_secs_f64(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        })
    }

    pub fn append_to(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .with_context(|| format!("opening run log {}", path.display()))?;
        let line = serde_json::to_string(self)?;
        writeln!(f, "{line}").with_context(|| format!("writing run log {}", path.display()))
    }
}
