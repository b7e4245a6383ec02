//! Checkpoint container: named parameter arrays with the architecture
//! config, all little-endian.
//!
//! Layout, byte-exact:
//!
//! ```text
//! magic    8 bytes  "BNSCKPT1"
//! version  u32
//! cfg_len  u32      followed by cfg_len bytes of TOML-encoded NetConfig
//! count    u32      number of arrays
//! per array:
//!   name_len u32, name bytes (utf-8)
//!   rank     u32, dims u64 * rank
//!   data     f64 * prod(dims)
//! ```

use super::{DenoiserParams, NetConfig, NetError};
use std::fs;
use std::path::Path;

const MAGIC: &[u8; 8] = b"BNSCKPT1";
const VERSION: u32 = 1;

pub fn save_checkpoint(params: &DenoiserParams, path: &Path) -> Result<(), NetError> {
    let cfg_text = toml::to_string(params.config())
        .map_err(|e| NetError::BadConfig { reason: e.to_string() })?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(cfg_text.len() as u32).to_le_bytes());
    out.extend_from_slice(cfg_text.as_bytes());
    out.extend_from_slice(&(params.entries().len() as u32).to_le_bytes());
    for entry in params.entries() {
        out.extend_from_slice(&(entry.name.len() as u32).to_le_bytes());
        out.extend_from_slice(entry.name.as_bytes());
        out.extend_from_slice(&(entry.shape.len() as u32).to_le_bytes());
        for &d in &entry.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in &params.data()[entry.offset..entry.offset + entry.len()] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, out)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize, name: &str) -> Result<&'a [u8], NetError> {
        if self.pos + len > self.bytes.len() {
            return Err(NetError::CorruptArray { name: name.to_string() });
        }
        let s = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    fn u32(&mut self, name: &str) -> Result<u32, NetError> {
        Ok(u32::from_le_bytes(self.take(4, name)?.try_into().unwrap()))
    }

    fn u64(&mut self, name: &str) -> Result<u64, NetError> {
        Ok(u64::from_le_bytes(self.take(8, name)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<(DenoiserParams, NetConfig), NetError> {
    let bytes = fs::read(path)?;
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(NetError::BadMagic);
    }
    let mut cur = Cursor { bytes: &bytes, pos: 8 };
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(NetError::VersionMismatch { found: version, expected: VERSION });
    }
    let cfg_len = cur.u32("config")? as usize;
    let cfg_text = std::str::from_utf8(cur.take(cfg_len, "config")?)
        .map_err(|_| NetError::BadConfig { reason: "config is not utf-8".into() })?;
    let config: NetConfig =
        toml::from_str(cfg_text).map_err(|e| NetError::BadConfig { reason: e.to_string() })?;

    let mut params = DenoiserParams::zeros(&config)?;
    let count = cur.u32("array count")? as usize;
    if count != params.entries().len() {
        return Err(NetError::CorruptArray { name: format!("array count {count}") });
    }
    for idx in 0..count {
        let name_len = cur.u32("array name")? as usize;
        let name = std::str::from_utf8(cur.take(name_len, "array name")?)
            .map_err(|_| NetError::CorruptArray { name: format!("array {idx}") })?
            .to_string();
        let rank = cur.u32(&name)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u64(&name)? as usize);
        }
        let expected = params
            .entries()
            .iter()
            .find(|e| e.name == name)
            .cloned()
            .ok_or_else(|| NetError::CorruptArray { name: name.clone() })?;
        if expected.shape != shape {
            return Err(NetError::CorruptArray { name });
        }
        let len = expected.len();
        let raw = cur.take(len * 8, &name)?;
        for (i, chunk) in raw.chunks_exact(8).enumerate() {
            params.data_mut()[expected.offset + i] = f64::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    Ok((params, config))
}

/// Loads a checkpoint and insists it match `wanted`, naming the first
/// differing config field otherwise.
pub fn load_checkpoint_expecting(
    path: &Path,
    wanted: &NetConfig,
) -> Result<DenoiserParams, NetError> {
    let (params, config) = load_checkpoint(path)?;
    if let Some(field) = wanted.diff_field(&config) {
        return Err(NetError::ConfigMismatch { field });
    }
    Ok(params)
}
