//! Binary velocity-field files: `UFND`, u32 version, u32 resolution, u32
//! channel count, then `channels × W × W` little-endian f32 in (u, v) order.

use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::{VelocityField, CUT_HEIGHT};

pub const FIELD_MAGIC: &[u8; 4] = b"UFND";
pub const FIELD_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

pub fn encode_field(field: &VelocityField) -> Vec<u8> {
    let w = field.resolution;
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * w * w);
    out.extend_from_slice(FIELD_MAGIC);
    out.extend_from_slice(&FIELD_VERSION.to_le_bytes());
    out.extend_from_slice(&(w as u32).to_le_bytes());
    out.extend_from_slice(&2u32.to_le_bytes());
    for x in field.u.iter().chain(&field.v) {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub(crate) fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"))
}

pub(crate) fn read_f32s(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4-byte chunk")))
        .collect()
}

/// Decodes a field; `cell_size` is not stored in the file and comes from the
/// dataset manifest.
pub fn decode_field(bytes: &[u8], cell_size: f64) -> Result<VelocityField> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Integrity(format!(
            "field file truncated: header needs {HEADER_LEN} bytes, got {}",
            bytes.len()
        )));
    }
    if &bytes[..4] != FIELD_MAGIC {
        return Err(Error::Format(format!("bad field magic {:?}", &bytes[..4])));
    }
    let version = read_u32(bytes, 4);
    if version != FIELD_VERSION {
        return Err(Error::Format(format!("unsupported field version {version}")));
    }
    let w = read_u32(bytes, 8) as usize;
    let channels = read_u32(bytes, 12) as usize;
    if channels != 2 {
        return Err(Error::Format(format!("expected 2 channels (u, v), got {channels}")));
    }
    let expected = HEADER_LEN + channels * w * w * 4;
    if bytes.len() != expected {
        return Err(Error::Integrity(format!(
            "field file length mismatch: expected {expected} bytes, got {}",
            bytes.len()
        )));
    }
    let values = read_f32s(&bytes[HEADER_LEN..]);
    let (u, v) = values.split_at(w * w);
    Ok(VelocityField {
        resolution: w,
        cell_size,
        u: u.to_vec(),
        v: v.to_vec(),
        cut_height: CUT_HEIGHT,
    })
}

pub fn write_field(field: &VelocityField, path: &Path) -> Result<()> {
    std::fs::write(path, encode_field(field)).map_err(|e| Error::io(path, e))
}

pub fn read_field(path: &Path, cell_size: f64) -> Result<VelocityField> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_field(&bytes, cell_size)
}
