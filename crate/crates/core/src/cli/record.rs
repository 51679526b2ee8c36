//! Run records, assertions and atomic artifact writes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::Result;

pub const RUN_SCHEMA: &str = "freebound.run/1";
pub const REPORT_SCHEMA: &str = "freebound.report/1";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assertion {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Assertion {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Assertion {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

/// Metadata of one pipeline invocation. Only this file carries timestamps;
/// every other artifact is a deterministic function of config and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema: String,
    pub name: String,
    pub pipeline: String,
    pub config_hash: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    /// Paths relative to the output directory.
    pub artifacts: Vec<String>,
    pub assertions: Vec<Assertion>,
    pub metrics: BTreeMap<String, f64>,
    pub error: Option<String>,
}

impl RunRecord {
    pub fn passed(&self) -> bool {
        self.error.is_none() && self.assertions.iter().all(|a| a.passed)
    }
}

pub fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

/// SHA-256 of the compact JSON text with object keys sorted.
pub fn config_hash(config: &Value) -> String {
    // serde_json maps are ordered by key, so serialization is canonical
    let text = serde_json::to_string(config).unwrap_or_default();
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut tmp: PathBuf = path.to_path_buf();
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    tmp.set_file_name(format!(".{name}.tmp"));
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Collects artifacts written into one output directory.
#[derive(Debug)]
pub struct ArtifactSink {
    pub dir: PathBuf,
    pub written: Vec<String>,
}

impl ArtifactSink {
    pub fn new(dir: PathBuf) -> Self {
        ArtifactSink { dir, written: Vec::new() }
    }

    pub fn write(&mut self, name: &str, contents: &[u8]) -> Result<()> {
        write_atomic(&self.dir.join(name), contents)?;
        self.written.push(name.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn hash_ignores_key_order() {
        let a: Value = serde_json::from_str(r#"{"b": 1, "a": {"y": 2, "x": 3}}"#).unwrap();
        let b = json!({"a": {"x": 3, "y": 2}, "b": 1});
        assert_eq!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a).len(), 64);
    }

    #[test]
    fn atomic_write_leaves_no_temporary() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/out.txt");
        write_atomic(&p, b"abc").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"abc");
        let names: Vec<_> = std::fs::read_dir(p.parent().unwrap()).unwrap().collect();
        assert_eq!(names.len(), 1);
    }
}
