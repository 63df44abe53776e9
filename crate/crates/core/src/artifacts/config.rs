//! Canonical config hashing.
//!
//! Run directories are keyed by the hash of the fully-resolved run config, so
//! identical reruns land in the same directory and can reuse artifacts.

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::ConfigError;

/// Hex SHA-256 of the canonical JSON form of `config`.
///
/// Canonicalization relies on `serde_json`'s sorted object keys, so two
/// configs that differ only in key order hash identically. The config must be
/// fully resolved (all defaults applied) before hashing.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String, ConfigError> {
    let value = serde_json::to_value(config)?;
    let canonical = serde_json::to_string(&value)?;
    let mut hasher = Sha256::new();
    hasher.update(canonical.as_bytes());
    Ok(hex::encode(hasher.finalize()))
}

/// First eight hex chars of a config hash; used as the run directory name.
pub fn short_hash(full: &str) -> &str {
    &full[..8.min(full.len())]
}
