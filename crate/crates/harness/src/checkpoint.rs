//! Binary checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "ACNX"  u32 version = 1
//! u64 document length, UTF-8 JSON document
//! u64 tensor count
//! per tensor: u16 name length, UTF-8 name, tensor blob ("TNSR" format)
//! 32-byte SHA-256 of every preceding byte
//! ```
//!
//! The document is the canonical architecture JSON with one extra top-level
//! key, `training`, holding [`TrainingMeta`]. Tensors appear in parameter
//! slot order.

use std::path::Path;

use condenser_core::backbone::{ensure_valid, param_slots, ArchitectureSpec, Network};
use condenser_core::params::ModelParams;
use condenser_core::tensor::{read_blob_prefix, write_blob_into};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CheckpointError, HarnessError, Result};
use crate::specio::canonical_value;
use crate::train::EpochMetrics;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"ACNX";
pub const CHECKPOINT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    /// Completed epochs.
    pub epoch: usize,
    pub seed: u64,
    pub metrics: Vec<EpochMetrics>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub spec: ArchitectureSpec,
    pub params: ModelParams<f32>,
    pub training: TrainingMeta,
}

impl Checkpoint {
    pub fn from_network(net: &Network<f32>, training: TrainingMeta) -> Self {
        Checkpoint {
            spec: net.spec().clone(),
            params: net.params().clone(),
            training,
        }
    }

    pub fn into_network(self) -> Result<Network<f32>> {
        Ok(Network::new(self.spec, self.params)?)
    }
}

pub fn encode(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let mut doc = canonical_value(&ckpt.spec)?;
    let meta = canonical_value(&ckpt.training)?;
    doc.as_object_mut().expect("spec serializes to an object").insert("training".into(), meta);
    let doc = serde_json::to_vec(&doc).map_err(|e| HarnessError::json("checkpoint document", e))?;

    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(doc.len() as u64).to_le_bytes());
    out.extend_from_slice(&doc);
    out.extend_from_slice(&(ckpt.params.len() as u64).to_le_bytes());
    for (slot, t) in ckpt.params.iter() {
        let name = slot.name.as_bytes();
        let len = u16::try_from(name.len())
            .map_err(|_| HarnessError::Usage(format!("parameter name too long: {}", slot.name)))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name);
        write_blob_into(t, &mut out);
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| CheckpointError::Corrupt(format!("truncated while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }


    fn len(&mut self, what: &str) -> Result<usize, CheckpointError> {
        let v = u64::from_le_bytes(self.take(8, what)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| CheckpointError::Corrupt(format!("{what} {v} is out of range")))
    }
}

/// Parses and verifies a checkpoint image.
///
/// Checks run in order: magic, version, digest, then structure. A file
/// whose embedded architecture fails validation is rejected with
/// [`CheckpointError::InvalidSpec`].
pub fn decode(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    if bytes.len() < 8 {
        return Err(CheckpointError::Corrupt("file too short".into()));
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version(version));
    }
    if bytes.len() < 8 + DIGEST_LEN {
        return Err(CheckpointError::Corrupt("file too short".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(CheckpointError::Digest);
    }

    let mut r = Reader { bytes: body, pos: 8 };
    let doc_len = r.len("document length")?;
    let doc = r.take(doc_len, "document")?;
    let mut doc: Value =
        serde_json::from_slice(doc).map_err(|e| CheckpointError::Corrupt(format!("document: {e}")))?;
    let training = doc
        .as_object_mut()
        .and_then(|m| m.remove("training"))
        .ok_or_else(|| CheckpointError::Corrupt("document lacks training metadata".into()))?;
    let training: TrainingMeta =
        serde_json::from_value(training).map_err(|e| CheckpointError::Corrupt(format!("training metadata: {e}")))?;
    let spec: ArchitectureSpec =
        serde_json::from_value(doc).map_err(|e| CheckpointError::InvalidSpec(e.to_string()))?;
    ensure_valid(&spec).map_err(|e| CheckpointError::InvalidSpec(e.to_string()))?;
    let slots = param_slots(&spec).map_err(|e| CheckpointError::InvalidSpec(e.to_string()))?;

    let count = r.len("tensor count")?;
    if count != slots.len() {
        return Err(CheckpointError::Corrupt(format!(
            "{count} tensors stored, architecture needs {}",
            slots.len()
        )));
    }
    let mut tensors = Vec::with_capacity(count);
    for slot in &slots {
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "tensor name")?)
            .map_err(|_| CheckpointError::Corrupt("tensor name is not UTF-8".into()))?;
        if name != slot.name {
            return Err(CheckpointError::Corrupt(format!("expected tensor {}, found {name}", slot.name)));
        }
        let (t, used) = read_blob_prefix(&r.bytes[r.pos..])?;
        r.pos += used;
        if t.shape() != slot.shape {
            return Err(CheckpointError::Corrupt(format!(
                "tensor {name} has shape {:?}, expected {:?}",
                t.shape(),
                slot.shape
            )));
        }
        tensors.push(t);
    }
    if r.pos != body.len() {
        return Err(CheckpointError::Corrupt(format!("{} trailing bytes", body.len() - r.pos)));
    }
    let params = ModelParams::from_parts(slots, tensors).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    Ok(Checkpoint { spec, params, training })
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    std::fs::write(path, encode(ckpt)?).map_err(|e| HarnessError::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(decode(&bytes)?)
}
