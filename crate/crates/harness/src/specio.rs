//! Architecture documents on disk.
//!
//! Documents are JSON. The canonical form has object keys sorted and no
//! insignificant whitespace; its SHA-256 is the architecture digest used in reports
//! and logs.

use std::path::Path;

use condenser_core::backbone::ArchitectureSpec;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

/// Key-sorted JSON value (serde_json maps are ordered by key).
pub fn canonical_value<T: Serialize>(v: &T) -> Result<Value> {
    serde_json::to_value(v).map_err(|e| HarnessError::json("serialize", e))
}

pub fn canonical_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string(&canonical_value(v)?).map_err(|e| HarnessError::json("serialize", e))
}

/// Canonical form with two-space indentation, for files people read.
pub fn pretty_json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(&canonical_value(v)?).map_err(|e| HarnessError::json("serialize", e))?;
    s.push('\n');
    Ok(s)
}

/// Lowercase hex SHA-256 of the canonical document.
pub fn spec_digest(spec: &ArchitectureSpec) -> Result<String> {
    Ok(hex::encode(Sha256::digest(canonical_json(spec)?.as_bytes())))
}

pub fn parse_spec(text: &str) -> Result<ArchitectureSpec> {
    serde_json::from_str(text).map_err(|e| HarnessError::json("architecture document", e))
}

pub fn read_spec(path: &Path) -> Result<ArchitectureSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::json(path.display().to_string(), e))
}

pub fn write_spec(path: &Path, spec: &ArchitectureSpec) -> Result<()> {
    std::fs::write(path, pretty_json(spec)?).map_err(|e| HarnessError::io(path, e))
}
