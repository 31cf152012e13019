//! Checkpoint format: a 32-byte little-endian header followed by the flat
//! parameter vector as little-endian `f64`.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "ZLPC"
//! 4       4     format version (u32) = 1
//! 8       4     vocab (u32)
//! 12      4     embed (u32)
//! 16      4     hidden (u32)
//! 20      4     window (u32)
//! 24      8     parameter count (u64)
//! 32      8*n   parameters
//! ```

use std::path::Path;

use super::network::{PolicyDims, PolicyParams};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"ZLPC";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 32;

pub fn encode(params: &PolicyParams) -> Vec<u8> {
    let d = params.dims;
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * params.values.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for n in [d.vocab, d.embed, d.hidden, d.window] {
        out.extend_from_slice(&(n as u32).to_le_bytes());
    }
    out.extend_from_slice(&(params.values.len() as u64).to_le_bytes());
    for v in &params.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<PolicyParams> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(Error::Format("not a policy checkpoint".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    if u32_at(4) != VERSION as usize {
        return Err(Error::Format(format!("unsupported checkpoint version {}", u32_at(4))));
    }
    let dims = PolicyDims {
        vocab: u32_at(8),
        embed: u32_at(12),
        hidden: u32_at(16),
        window: u32_at(20),
    };
    let count = u64::from_le_bytes(bytes[24..32].try_into().unwrap()) as usize;
    let body = &bytes[HEADER_LEN..];
    if body.len() != count * 8 {
        return Err(Error::Format(format!(
            "checkpoint declares {count} parameters but carries {} bytes",
            body.len()
        )));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    PolicyParams::from_values(dims, values)
}

pub fn save(params: &PolicyParams, path: &Path) -> Result<()> {
    std::fs::write(path, encode(params)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<PolicyParams> {
    decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
