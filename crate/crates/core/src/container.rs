//! Binary feature container.
//!
//! Layout (little-endian):
//!
//! ```text
//! "EMF1"            4 bytes magic
//! record_count      u32
//! per record:
//!   id_len          u16
//!   id              id_len bytes, UTF-8
//!   T               u32
//!   D               u32
//!   values          T*D f32, row-major
//! ```
//!
//! Values are held as `f64` in memory and narrowed to `f32` on disk.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use crate::data::FeatureSequence;
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"EMF1";

/// Exact on-disk size of a container holding `records`.
pub fn container_size(records: &[FeatureSequence]) -> u64 {
    let body: u64 = records
        .iter()
        .map(|r| 2 + r.sample_id().len() as u64 + 4 + 4 + 4 * (r.frames() * r.dim()) as u64)
        .sum();
    8 + body
}

fn check_writable(index: usize, record: &FeatureSequence) -> Result<()> {
    if record.sample_id().len() > u16::MAX as usize {
        return Err(Error::Malformed(format!(
            "record {index}: sample id longer than {} bytes",
            u16::MAX
        )));
    }
    if u32::try_from(record.frames()).is_err() || u32::try_from(record.dim()).is_err() {
        return Err(Error::Malformed(format!("record {index}: shape exceeds u32")));
    }
    // finite in f64 but overflowing f32 would come back as infinity
    if record.values().iter().any(|v| !(*v as f32).is_finite()) {
        return Err(Error::NonFiniteValue { index });
    }
    Ok(())
}

/// Serializes `records` into `out`. Every record is validated before the
/// first byte is written.
pub fn write_container<W: Write>(records: &[FeatureSequence], mut out: W) -> Result<u64> {
    for (i, r) in records.iter().enumerate() {
        check_writable(i, r)?;
    }
    let count = u32::try_from(records.len()).map_err(|_| Error::Malformed("more than u32::MAX records".into()))?;
    let mut buf = Vec::with_capacity(container_size(records) as usize);
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&count.to_le_bytes());
    for r in records {
        buf.extend_from_slice(&(r.sample_id().len() as u16).to_le_bytes());
        buf.extend_from_slice(r.sample_id().as_bytes());
        buf.extend_from_slice(&(r.frames() as u32).to_le_bytes());
        buf.extend_from_slice(&(r.dim() as u32).to_le_bytes());
        for v in r.values() {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(buf.len() as u64)
}

pub fn write_feature_container(records: &[FeatureSequence], path: impl AsRef<Path>) -> Result<u64> {
    for (i, r) in records.iter().enumerate() {
        check_writable(i, r)?;
    }
    let file = fs::File::create(path)?;
    let mut out = io::BufWriter::new(file);
    let n = write_container(records, &mut out)?;
    out.flush()?;
    Ok(n)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, index: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::TruncatedRecord {
                index,
                reason: format!("missing {what} ({n} bytes at offset {})", self.pos),
            });
        };
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u16(&mut self, index: usize, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, index, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, index: usize, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, index, what)?.try_into().unwrap()))
    }
}

/// Parses a container held in memory.
pub fn parse_container(bytes: &[u8]) -> Result<Vec<FeatureSequence>> {
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        let mut found = [0u8; 4];
        let n = bytes.len().min(4);
        found[..n].copy_from_slice(&bytes[..n]);
        return Err(Error::BadMagic { found });
    }
    let mut cur = Cursor { bytes, pos: 4 };
    let count = cur.u32(0, "record count")? as usize;
    let mut records = Vec::with_capacity(count.min(1 << 16));
    for index in 0..count {
        let id_len = cur.u16(index, "id length")? as usize;
        let id = std::str::from_utf8(cur.take(id_len, index, "sample id")?)
            .map_err(|_| Error::Malformed(format!("record {index}: sample id is not UTF-8")))?
            .to_string();
        let frames = cur.u32(index, "T")? as usize;
        let dim = cur.u32(index, "D")? as usize;
        let n = frames
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::TruncatedRecord {
                index,
                reason: "shape overflows".into(),
            })?;
        let raw = cur.take(n, index, "values")?;
        let mut values = Vec::with_capacity(frames * dim);
        for chunk in raw.chunks_exact(4) {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::NonFiniteValue { index });
            }
            values.push(v as f64);
        }
        let seq = FeatureSequence::new(id, frames, dim, values).map_err(|e| match e {
            Error::InvalidSequence(reason) => Error::TruncatedRecord { index, reason },
            other => other,
        })?;
        records.push(seq);
    }
    if cur.pos != bytes.len() {
        return Err(Error::Malformed(format!(
            "{} trailing bytes after {count} records",
            bytes.len() - cur.pos
        )));
    }
    Ok(records)
}

pub fn read_feature_container(path: impl AsRef<Path>) -> Result<Vec<FeatureSequence>> {
    let bytes = fs::read(path)?;
    parse_container(&bytes)
}
