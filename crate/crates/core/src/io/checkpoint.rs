//! Model checkpoints.
//!
//! Layout: magic `CKPT`; `u32` LE length `n`; `n` bytes of the model
//! configuration as compact JSON; `u64` LE parameter count; the parameters as
//! little-endian `f32`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::network::{Model, ModelConfig, ModelWeights};

const MAGIC: &[u8; 4] = b"CKPT";

pub fn encode_checkpoint(model: &Model) -> Vec<u8> {
    let text = serde_json::to_string(&model.config).expect("model config serializes");
    let values = model.weights.values();
    let mut out = Vec::with_capacity(16 + text.len() + 4 * values.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&u32::try_from(text.len()).expect("config text fits in u32").to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Model> {
    let fail = |reason: &str| Error::format("checkpoint", reason.to_string());
    if bytes.get(..4) != Some(MAGIC) {
        return Err(fail("bad magic"));
    }
    let text_len = bytes
        .get(4..8)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
        .ok_or_else(|| fail("truncated header"))?;
    let text = bytes.get(8..8 + text_len).ok_or_else(|| fail("truncated config"))?;
    let config: ModelConfig =
        serde_json::from_slice(text).map_err(|e| Error::format("checkpoint", format!("config: {e}")))?;
    let rest = &bytes[8 + text_len..];
    let count = rest
        .get(..8)
        .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
        .ok_or_else(|| fail("truncated parameter count"))?;
    let payload = &rest[8..];
    if (payload.len() as u64) != count.saturating_mul(4) {
        return Err(Error::format(
            "checkpoint",
            format!("length mismatch: {count} parameters declared, {} bytes present", payload.len()),
        ));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    config.validate()?;
    let weights = ModelWeights::from_values(&config, values)?;
    Model::new(config, weights)
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::from(e).at(path))?;
    decode_checkpoint(&bytes).map_err(|e| e.at(path))
}

pub fn write_checkpoint(path: impl AsRef<Path>, model: &Model) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(model)).map_err(|e| Error::from(e).at(path))
}
