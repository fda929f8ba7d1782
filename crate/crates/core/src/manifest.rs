//! The run manifest: config echo, seed, timestamps, module versions, and
//! the final outcome. Written exactly once, after everything else.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunOutcome {
    Completed,
    Diverged,
    Failed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub master_seed: u64,
    /// `key=value` config echo; reparses to the identical config.
    pub config: String,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub module_versions: BTreeMap<String, String>,
    pub outcome: RunOutcome,
}

pub fn now_unix_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

/// Version strings per module, all tied to the crate version.
pub fn module_versions() -> BTreeMap<String, String> {
    let v = env!("CARGO_PKG_VERSION").to_string();
    [
        "aggregation",
        "bank",
        "datagen",
        "diagnostics",
        "federation",
        "harness",
        "labeler",
        "losses",
        "model",
    ]
    .iter()
    .map(|m| (m.to_string(), v.clone()))
    .collect()
}

pub fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<()> {
    let display = path.display().to_string();
    let json = serde_json::to_string_pretty(manifest)?;
    std::fs::write(path, json).map_err(|e| Error::io(display, e))
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(display, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{emit_config, parse_config, FederationConfig};

    #[test]
    fn manifest_round_trips_and_config_echo_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let cfg = FederationConfig::default();
        let manifest = RunManifest {
            format_version: MANIFEST_FORMAT_VERSION,
            master_seed: cfg.seed,
            config: emit_config(&cfg),
            started_unix_ms: 1,
            finished_unix_ms: 2,
            module_versions: module_versions(),
            outcome: RunOutcome::Completed,
        };
        write_manifest(&path, &manifest).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(back.master_seed, manifest.master_seed);
        assert_eq!(back.outcome, RunOutcome::Completed);
        let echoed = parse_config(&back.config).unwrap();
        assert_eq!(echoed, cfg);
    }
}
