//! Tensor blob codec.
//!
//! Layout, all little-endian:
//!
//! ```text
//! offset  size        field
//! 0       4           magic "TNSR"
//! 4       4           version (u32) = 1
//! 8       32          n, c, h, w (u64 each)
//! 40      4·n·c·h·w   values (f32, row-major NCHW)
//! ```

use alloc::vec::Vec;

use super::{Shape, Tensor};

pub const BLOB_MAGIC: [u8; 4] = *b"TNSR";
pub const BLOB_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 * 8;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BlobError {
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("{0} trailing bytes after tensor data")]
    TrailingBytes(usize),
    #[error("invalid dimensions {0:?}")]
    InvalidDims([u64; 4]),
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
}

pub fn write_blob(t: &Tensor<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * t.numel());
    write_blob_into(t, &mut out);
    out
}

pub fn write_blob_into(t: &Tensor<f32>, out: &mut Vec<u8>) {
    out.extend_from_slice(&BLOB_MAGIC);
    out.extend_from_slice(&BLOB_VERSION.to_le_bytes());
    for d in t.shape().dims() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Decodes a blob that must span `bytes` exactly.
pub fn read_blob(bytes: &[u8]) -> Result<Tensor<f32>, BlobError> {
    let (t, used) = read_blob_prefix(bytes)?;
    if used != bytes.len() {
        return Err(BlobError::TrailingBytes(bytes.len() - used));
    }
    Ok(t)
}

/// Decodes one blob from the front of `bytes`; returns it and the bytes used.
pub fn read_blob_prefix(bytes: &[u8]) -> Result<(Tensor<f32>, usize), BlobError> {
    let need = |needed: usize| {
        if bytes.len() < needed {
            Err(BlobError::Truncated {
                needed,
                have: bytes.len(),
            })
        } else {
            Ok(())
        }
    };
    need(4)?;
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != BLOB_MAGIC {
        return Err(BlobError::BadMagic(magic));
    }
    need(HEADER_LEN)?;
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != BLOB_VERSION {
        return Err(BlobError::UnsupportedVersion(version));
    }
    let mut dims = [0u64; 4];
    for (i, d) in dims.iter_mut().enumerate() {
        let o = 8 + 8 * i;
        *d = u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    }
    let as_usize = |v: u64| usize::try_from(v).map_err(|_| BlobError::InvalidDims(dims));
    let shape = Shape::new(
        as_usize(dims[0])?,
        as_usize(dims[1])?,
        as_usize(dims[2])?,
        as_usize(dims[3])?,
    )
    .map_err(|_| BlobError::InvalidDims(dims))?;
    let payload = shape
        .numel()
        .checked_mul(4)
        .and_then(|p| p.checked_add(HEADER_LEN))
        .ok_or(BlobError::InvalidDims(dims))?;
    need(payload)?;
    let mut data = Vec::with_capacity(shape.numel());
    for (i, chunk) in bytes[HEADER_LEN..payload].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(BlobError::NonFinite(i));
        }
        data.push(v);
    }
    Ok((Tensor::from_raw(shape, data), payload))
}
