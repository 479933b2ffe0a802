//! Artifact envelopes and atomic file output.
//!
//! JSON artifacts carry the config hash and seed inline. CSV files keep their
//! plain format and get a `<name>.meta.json` sidecar with the same fields.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::failure::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Artifact<T> {
    pub kind: String,
    pub config_hash: String,
    pub seed: u64,
    pub data: T,
}

/// Stamp shared by every artifact of one invocation.
#[derive(Debug, Clone)]
pub struct Stamp {
    pub config_hash: String,
    pub seed: u64,
}

impl Stamp {
    pub fn wrap<T>(&self, kind: &str, data: T) -> Artifact<T> {
        Artifact {
            kind: kind.to_string(),
            config_hash: self.config_hash.clone(),
            seed: self.seed,
            data,
        }
    }
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).with_context(|| format!("temp file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .map_err(|e| e.error)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, stamp: &Stamp, kind: &str, data: &T) -> anyhow::Result<()> {
    let mut bytes = serde_json::to_vec_pretty(&stamp.wrap(kind, data))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path, kind: &str) -> anyhow::Result<Artifact<T>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let artifact: Artifact<T> =
        serde_json::from_str(&text).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    if artifact.kind != kind {
        return Err(Failure::data(format!(
            "{} holds a {} artifact, expected {kind}",
            path.display(),
            artifact.kind
        ))
        .into());
    }
    Ok(artifact)
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    path.with_file_name(name)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvMeta {
    pub file: String,
    pub rows: usize,
}

/// Writes a CSV body and its metadata sidecar.
pub fn write_csv(path: &Path, stamp: &Stamp, kind: &str, body: &[u8]) -> anyhow::Result<()> {
    write_atomic(path, body)?;
    let rows = body.iter().filter(|&&b| b == b'\n').count();
    let meta = CsvMeta {
        file: path.file_name().unwrap_or_default().to_string_lossy().into_owned(),
        rows,
    };
    write_json(&meta_path(path), stamp, kind, &meta)
}
