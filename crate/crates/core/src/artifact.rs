//! Shared helpers for persisted artifacts: config hashing and file access.

use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{NavError, Result};

/// Hash of the canonical JSON form of a stage configuration, 16 hex chars.
pub fn config_hash<S: Serialize + ?Sized>(config: &S) -> String {
    let canonical = serde_json::to_vec(config).expect("config serializes");
    let digest = Sha256::digest(&canonical);
    hex::encode(&digest[..8])
}

/// Hash of several upstream hashes plus a stage config.
pub fn chained_hash<S: Serialize + ?Sized>(upstream: &[&str], config: &S) -> String {
    config_hash(&(upstream, config))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| NavError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| NavError::io(dir, e))?;
        }
    }
    fs::write(path, text).map_err(|e| NavError::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| NavError::io(dir, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| NavError::io(path, e))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| NavError::io(path, e))
}

/// JSON with two-space indentation and a trailing LF.
pub fn to_pretty_json<S: Serialize + ?Sized>(value: &S) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// Prefix line carried by delimiter-separated artifacts.
pub fn hash_comment(hash: &str) -> String {
    format!("# config_hash={hash}\n")
}

/// Splits off the `# config_hash=` line written by [`hash_comment`].
pub fn split_hash_comment(text: &str) -> Result<(String, &str)> {
    let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
    let hash = first
        .strip_prefix("# config_hash=")
        .ok_or_else(|| NavError::malformed("table", "missing `# config_hash=` line"))?;
    Ok((hash.trim().to_string(), rest))
}
