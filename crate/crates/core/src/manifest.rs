//! Run manifest: inventory of every artifact with its SHA-256.

use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::hex;
use crate::error::{io_err, CoreError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Path relative to the run directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config_hash: String,
    pub tool_version: String,
    /// Unix seconds when the run directory was first written.
    pub created: u64,
    /// Unix seconds of this manifest.
    pub updated: u64,
    pub artifacts: Vec<Artifact>,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn file_sha256(path: &Path) -> Result<(String, u64)> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok((hex(&Sha256::digest(&bytes)), bytes.len() as u64))
}

/// All regular files below `dir` except the manifest, sorted by path.
pub fn inventory(dir: &Path) -> Result<Vec<Artifact>> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<Artifact>) -> Result<()> {
        for entry in fs::read_dir(dir).map_err(io_err(dir))? {
            let path = entry.map_err(io_err(dir))?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
                continue;
            }
            let rel = path.strip_prefix(root).expect("walk stays below root");
            let rel = rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy().into_owned())
                .collect::<Vec<_>>()
                .join("/");
            if rel == MANIFEST_FILE {
                continue;
            }
            let (sha256, bytes) = file_sha256(&path)?;
            out.push(Artifact { path: rel, sha256, bytes });
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out)?;
    out.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(out)
}

/// Writes `manifest.json`, keeping the creation time of an earlier one.
pub fn write_manifest(dir: &Path, run_id: &str, config_hash: &str) -> Result<RunManifest> {
    let path = dir.join(MANIFEST_FILE);
    let created = read_manifest(dir).map(|m| m.created).unwrap_or_else(|_| now());
    let manifest = RunManifest {
        run_id: run_id.into(),
        config_hash: config_hash.into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        created,
        updated: now(),
        artifacts: inventory(dir)?,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CoreError::Invalid(e.to_string()))?;
    fs::write(&path, text + "\n").map_err(io_err(&path))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest> {
    crate::game::read_json(&dir.join(MANIFEST_FILE))
}

/// Paths whose file is missing or whose content no longer matches.
pub fn verify_manifest(dir: &Path) -> Result<Vec<String>> {
    let manifest = read_manifest(dir)?;
    let mut bad = Vec::new();
    for a in &manifest.artifacts {
        let path = dir.join(&a.path);
        match file_sha256(&path) {
            Ok((h, _)) if h == a.sha256 => {}
            _ => bad.push(a.path.clone()),
        }
    }
    Ok(bad)
}
