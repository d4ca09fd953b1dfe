//! Token shard files: a 16-byte header (magic, dictionary size, token
//! count) followed by little-endian two-byte token ids.

use super::TokenId;
use crate::error::{Error, Result};
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

pub const SHARD_MAGIC: &[u8; 4] = b"NTTK";

/// Write encoded tokens with their dictionary size. Specials never
/// appear in shards, so every id must be below `d`.
pub fn write_token_shard(path: &Path, d: u32, ids: &[TokenId]) -> Result<()> {
    if let Some(&bad) = ids.iter().find(|&&id| (id as u32) >= d) {
        return Err(Error::Format(format!(
            "token id {bad} not below dictionary size {d}"
        )));
    }
    let mut out = BufWriter::new(fs::File::create(path)?);
    out.write_all(SHARD_MAGIC)?;
    out.write_all(&d.to_le_bytes())?;
    out.write_all(&(ids.len() as u64).to_le_bytes())?;
    for &id in ids {
        out.write_all(&id.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

/// Read a shard, returning the dictionary size and the ids.
pub fn read_token_shard(path: &Path) -> Result<(u32, Vec<TokenId>)> {
    let mut file = fs::File::open(path)?;
    let mut header = [0u8; 16];
    file.read_exact(&mut header)
        .map_err(|_| Error::Format("token shard shorter than its header".into()))?;
    if &header[0..4] != SHARD_MAGIC {
        return Err(Error::Format("bad token shard magic".into()));
    }
    let d = u32::from_le_bytes(header[4..8].try_into().unwrap());
    let count = u64::from_le_bytes(header[8..16].try_into().unwrap()) as usize;

    let mut body = Vec::new();
    file.read_to_end(&mut body)?;
    if body.len() != count * 2 {
        return Err(Error::Format(format!(
            "token shard body holds {} bytes, header promises {}",
            body.len(),
            count * 2
        )));
    }
    let mut ids = Vec::with_capacity(count);
    for chunk in body.chunks_exact(2) {
        let id = u16::from_le_bytes([chunk[0], chunk[1]]);
        if (id as u32) >= d {
            return Err(Error::Format(format!(
                "token id {id} not below dictionary size {d}"
            )));
        }
        ids.push(id);
    }
    Ok((d, ids))
}
