//! AMAP files: `"AMAP"`, u32 width, u32 height, u8 empty flag, then
//! width·height little-endian f32 values in row-major order.

use std::path::Path;

use crate::attention::AttentionMap;
use crate::error::{Error, Result};

pub const MAP_MAGIC: &[u8; 4] = b"AMAP";
const HEADER_LEN: usize = 13;

pub fn encode_map(map: &AttentionMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * map.values().len());
    out.extend_from_slice(MAP_MAGIC);
    out.extend_from_slice(&(map.width() as u32).to_le_bytes());
    out.extend_from_slice(&(map.height() as u32).to_le_bytes());
    out.push(map.is_empty() as u8);
    for v in map.values() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_map(bytes: &[u8], source: &str) -> Result<AttentionMap> {
    let err = |offset: usize, msg: String| Error::parse(source, format!("byte {offset}"), msg);
    if bytes.len() < HEADER_LEN {
        return Err(err(bytes.len(), format!("header needs {HEADER_LEN} bytes")));
    }
    if &bytes[..4] != MAP_MAGIC {
        return Err(err(0, "bad magic".into()));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize;
    let (w, h) = (word(4), word(8));
    if w == 0 || h == 0 {
        return Err(err(4, format!("invalid dimensions {w}x{h}")));
    }
    let expected = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| err(4, format!("dimensions {w}x{h} overflow")))?;
    if bytes.len() != expected {
        return Err(err(
            bytes.len().min(expected),
            format!("{w}x{h} map needs {expected} bytes, file has {}", bytes.len()),
        ));
    }
    let empty = match bytes[12] {
        0 => false,
        1 => true,
        f => return Err(err(12, format!("empty flag must be 0 or 1, found {f}"))),
    };
    let values: Vec<f64> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
        return Err(err(HEADER_LEN + 4 * i, "values must be finite and non-negative".into()));
    }
    if empty {
        if values.iter().any(|v| *v != 0.0) {
            return Err(err(HEADER_LEN, "empty map with non-zero values".into()));
        }
        return Ok(AttentionMap::empty(w, h));
    }
    let map = AttentionMap::from_weights(w, h, values)?;
    if map.is_empty() {
        return Err(err(HEADER_LEN, "non-empty map with no mass".into()));
    }
    Ok(map)
}

pub fn save_map(path: &Path, map: &AttentionMap) -> Result<()> {
    std::fs::write(path, encode_map(map))?;
    Ok(())
}

pub fn load_map(path: &Path) -> Result<AttentionMap> {
    decode_map(&std::fs::read(path)?, &path.display().to_string())
}
