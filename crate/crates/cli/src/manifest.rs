//! Run manifests: the resolved configuration, master seed, timestamps, and
//! content digests of every emitted file, written atomically next to the
//! outputs.

use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct OutputDigest {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config: serde_json::Value,
    pub master_seed: u64,
    pub started_at: String,
    pub finished_at: String,
    pub outputs: Vec<OutputDigest>,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, master_seed: u64) -> Self {
        RunManifest {
            tool: "smartlab",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            config,
            master_seed,
            started_at: now_rfc3339(),
            finished_at: String::new(),
            outputs: Vec::new(),
        }
    }

    /// Digest an emitted file and record it.
    pub fn record_output(&mut self, path: &Path) -> io::Result<()> {
        let bytes = std::fs::read(path)?;
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        self.outputs.push(OutputDigest {
            path: path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.display().to_string()),
            bytes: bytes.len() as u64,
            sha256: hex_digest(&hasher.finalize()),
        });
        Ok(())
    }

    /// Finalize and write atomically (temp file + rename).
    pub fn write(mut self, path: &Path) -> io::Result<()> {
        self.finished_at = now_rfc3339();
        let body = serde_json::to_vec_pretty(&self).expect("manifest serializes");
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, &body)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }
}

/// Manifest path for a single-file output: `<file>.manifest.json`.
pub fn manifest_path_for_file(out: &Path) -> PathBuf {
    let mut name = out
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    name.push_str(".manifest.json");
    out.with_file_name(name)
}

fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        out.push_str(&format!("{b:02x}"));
    }
    out
}
