//! Index files: `"TE4R"`, u32 version, u32 dim, u64 count, `count` x (u16 id length + UTF-8
//! id), then `count x dim` little-endian `f32` row-major.

use std::fs;
use std::path::Path;

use super::EmbeddingIndex;
use crate::error::{Error, Result};

pub const INDEX_MAGIC: &[u8; 4] = b"TE4R";
pub const INDEX_VERSION: u32 = 1;

pub fn save_index(index: &EmbeddingIndex) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(INDEX_MAGIC);
    out.extend_from_slice(&INDEX_VERSION.to_le_bytes());
    out.extend_from_slice(&(index.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(index.len() as u64).to_le_bytes());
    for id in index.ids() {
        let len = u16::try_from(id.len())
            .map_err(|_| Error::InvalidArgument(format!("document id longer than 65535 bytes: {id:.40}...")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(id.as_bytes());
    }
    for v in index.vectors() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::LengthMismatch {
                expected: self.pos + n,
                found: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn load_index(bytes: &[u8]) -> Result<EmbeddingIndex> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).ok() != Some(INDEX_MAGIC.as_slice()) {
        return Err(Error::BadMagic { expected: "TE4R" });
    }
    let version = r.u32()?;
    if version != INDEX_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let dim = r.u32()? as usize;
    let count = usize::try_from(r.u64()?).map_err(|_| Error::InvalidArgument("count overflows".into()))?;
    let mut ids = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let len = r.u16()? as usize;
        let raw = r.take(len)?;
        ids.push(
            String::from_utf8(raw.to_vec())
                .map_err(|_| Error::InvalidArgument("document id is not UTF-8".into()))?,
        );
    }
    let expected = r.pos + 4 * count * dim;
    if bytes.len() != expected {
        return Err(Error::LengthMismatch {
            expected,
            found: bytes.len(),
        });
    }
    let vectors = bytes[r.pos..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    EmbeddingIndex::new(ids, vectors, dim)
}

pub fn write_index(path: &Path, index: &EmbeddingIndex) -> Result<()> {
    fs::write(path, save_index(index)?).map_err(|e| Error::io(path, e))
}

pub fn read_index(path: &Path) -> Result<EmbeddingIndex> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    load_index(&bytes)
}
