//! `DMAP` density-map files: the magic `DMAP`, then little-endian `u32`
//! height, width and scale, then `height·width` little-endian `f32` values in
//! row-major order.

use std::path::Path;

use crate::error::{Error, Result};
use crate::ground_truth::DensityMap;

const MAGIC: &[u8; 4] = b"DMAP";
const HEADER_LEN: usize = 16;

pub fn encode_dmap(map: &DensityMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * map.grid().len());
    out.extend_from_slice(MAGIC);
    for v in [map.height(), map.width(), map.scale()] {
        out.extend_from_slice(&u32::try_from(v).expect("map dimension fits in u32").to_le_bytes());
    }
    for v in map.grid() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_dmap(bytes: &[u8]) -> Result<DensityMap> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(Error::format("DMAP", "bad magic"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (height, width, scale) = (word(0), word(1), word(2));
    let expected = height
        .checked_mul(width)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::format("DMAP", "dimensions overflow"))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(Error::format(
            "DMAP",
            format!(
                "length mismatch: header declares {height}x{width} ({expected} bytes), payload has {} bytes",
                payload.len()
            ),
        ));
    }
    let grid = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    DensityMap::new(height, width, scale, grid).map_err(|e| Error::format("DMAP", e.to_string()))
}

pub fn read_dmap(path: impl AsRef<Path>) -> Result<DensityMap> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::from(e).at(path))?;
    decode_dmap(&bytes).map_err(|e| e.at(path))
}

pub fn write_dmap(path: impl AsRef<Path>, map: &DensityMap) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_dmap(map)).map_err(|e| Error::from(e).at(path))
}
