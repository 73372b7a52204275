//! Provenance record written into every artifact directory.

use std::io::Read;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// Full command line.
    pub command: Vec<String>,
    /// Merged settings that produced the artifacts.
    pub config: serde_json::Value,
    pub dataset_sha256: Option<String>,
    pub code_version: String,
    pub seeds: Vec<u64>,
    /// Seconds since the Unix epoch.
    pub started: u64,
    pub finished: u64,
}

impl RunManifest {
    pub const FILE_NAME: &'static str = "manifest.json";

    pub fn new(config: serde_json::Value, dataset_sha256: Option<String>, seeds: Vec<u64>) -> Self {
        let now = unix_now();
        RunManifest {
            command: std::env::args().collect(),
            config,
            dataset_sha256,
            code_version: code_version(),
            seeds,
            started: now,
            finished: now,
        }
    }

    /// Stamps the finish time and writes `path`.
    pub fn finish(mut self, path: &Path) -> Result<()> {
        self.finished = unix_now();
        let json = serde_json::to_string_pretty(&self).map_err(|e| CliError::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        std::fs::write(path, json).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Json {
            path: path.to_path_buf(),
            source: e,
        })
    }
}

pub fn code_version() -> String {
    format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"))
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Lowercase hex SHA-256 of a file.
pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(|e| CliError::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{:02x}", b)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("abc");
        std::fs::write(&p, b"abc").unwrap();
        assert_eq!(
            sha256_file(&p).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(RunManifest::FILE_NAME);
        let m = RunManifest::new(serde_json::json!({"epochs": 3}), Some("00".into()), vec![1, 2]);
        m.clone().finish(&p).unwrap();
        let back = RunManifest::load(&p).unwrap();
        assert_eq!(back.config, m.config);
        assert_eq!(back.seeds, vec![1, 2]);
        assert!(back.finished >= back.started);
    }
}
