//! Binary checkpoints: `"TE4E"`, u32 version, u32 V, u32 H, u32 d, then W1 (`H x V`), b1, W2
//! (`d x H`), b2 as little-endian `f32`, row-major. All header integers little-endian.

use std::fs;
use std::path::Path;

use super::EncoderParams;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TE4E";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

pub fn save_params(params: &EncoderParams) -> Vec<u8> {
    let (v, h, d) = (params.vocab(), params.hidden(), params.dim());
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * params.num_params());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    for x in [CHECKPOINT_VERSION, v as u32, h as u32, d as u32] {
        out.extend_from_slice(&x.to_le_bytes());
    }
    let mut put = |x: f64| out.extend_from_slice(&(x as f32).to_le_bytes());
    for row in 0..h {
        for col in 0..v {
            put(params.w1t[col * h + row]);
        }
    }
    params.b1.iter().chain(&params.w2).chain(&params.b2).for_each(|&x| put(x));
    out
}

fn u32_at(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().expect("4 bytes"))
}

pub fn load_params(bytes: &[u8]) -> Result<EncoderParams> {
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic { expected: "TE4E" });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::LengthMismatch {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let version = u32_at(bytes, 4);
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let (v, h, d) = (
        u32_at(bytes, 8) as usize,
        u32_at(bytes, 12) as usize,
        u32_at(bytes, 16) as usize,
    );
    let mut params = EncoderParams::zeros(v, h, d)?;
    let expected = HEADER_LEN + 4 * params.num_params();
    if bytes.len() != expected {
        return Err(Error::LengthMismatch {
            expected,
            found: bytes.len(),
        });
    }
    let mut floats = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))));
    for row in 0..h {
        for col in 0..v {
            params.w1t[col * h + row] = floats.next().expect("length checked");
        }
    }
    for t in [&mut params.b1, &mut params.w2, &mut params.b2] {
        for x in t.iter_mut() {
            *x = floats.next().expect("length checked");
        }
    }
    if !params.is_finite() {
        return Err(Error::InvalidArgument("checkpoint contains non-finite weights".into()));
    }
    Ok(params)
}

pub fn write_checkpoint(path: &Path, params: &EncoderParams) -> Result<()> {
    fs::write(path, save_params(params)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<EncoderParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    load_params(&bytes)
}
