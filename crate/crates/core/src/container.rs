//! Shared framing for the `GLTC` checkpoint and `SKPK` pack containers.
//!
//! Layout (little-endian): 4-byte magic, `u32` version, `u64` header length,
//! UTF-8 JSON header padded with spaces so the payload starts on a 64-byte
//! boundary, then the payload. Blob offsets are relative to the payload start
//! and every blob begins on a 64-byte boundary; gaps are zero-filled.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ALIGNMENT: usize = 64;
const PREAMBLE: usize = 16;

/// Location and checksum of one payload blob.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlobRef {
    pub offset: u64,
    pub byte_len: u64,
    pub crc32: u32,
}

#[inline]
fn align_up(x: usize) -> usize {
    x.div_ceil(ALIGNMENT) * ALIGNMENT
}

/// Assigns aligned offsets and checksums to `blobs` in order.
pub fn layout(blobs: &[Vec<u8>]) -> Vec<BlobRef> {
    let mut cursor = 0usize;
    blobs
        .iter()
        .map(|b| {
            let offset = align_up(cursor);
            cursor = offset + b.len();
            BlobRef { offset: offset as u64, byte_len: b.len() as u64, crc32: crc32fast::hash(b) }
        })
        .collect()
}

/// Serializes a full container. `refs` must come from [`layout`] on the same
/// blobs.
pub fn encode(magic: &[u8; 4], version: u32, header: &[u8], blobs: &[Vec<u8>], refs: &[BlobRef]) -> Vec<u8> {
    let payload_start = align_up(PREAMBLE + header.len());
    let header_len = payload_start - PREAMBLE;
    let payload_len = refs.last().map(|r| (r.offset + r.byte_len) as usize).unwrap_or(0);

    let mut out = Vec::with_capacity(payload_start + payload_len);
    out.extend_from_slice(magic);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(header_len as u64).to_le_bytes());
    out.extend_from_slice(header);
    out.resize(payload_start, b' ');
    for (blob, r) in blobs.iter().zip(refs) {
        out.resize(payload_start + r.offset as usize, 0);
        out.extend_from_slice(blob);
    }
    out
}

/// Splits a container into `(header_json, payload)` after checking the magic
/// and version.
pub fn decode<'a>(bytes: &'a [u8], magic: &[u8; 4], version: u32) -> Result<(&'a [u8], &'a [u8])> {
    if bytes.len() < PREAMBLE {
        if bytes.len() >= 4 && &bytes[..4] != magic {
            return Err(bad_magic(magic, &bytes[..4]));
        }
        return Err(Error::Truncated(format!("{} bytes is shorter than the preamble", bytes.len())));
    }
    if &bytes[..4] != magic {
        return Err(bad_magic(magic, &bytes[..4]));
    }
    let found = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if found != version {
        return Err(Error::UnsupportedVersion(found));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let end = (PREAMBLE as u64).checked_add(header_len).filter(|&e| e <= bytes.len() as u64);
    let Some(end) = end else {
        return Err(Error::Truncated(format!("header of {header_len} bytes exceeds file")));
    };
    let end = end as usize;
    Ok((&bytes[PREAMBLE..end], &bytes[end..]))
}

fn bad_magic(expected: &[u8; 4], found: &[u8]) -> Error {
    Error::BadMagic {
        expected: String::from_utf8_lossy(expected).into_owned(),
        found: String::from_utf8_lossy(found).into_owned(),
    }
}

/// Bounds-checks and CRC-verifies one blob.
pub fn blob<'a>(payload: &'a [u8], r: &BlobRef, name: &str) -> Result<&'a [u8]> {
    let end = r.offset.checked_add(r.byte_len).filter(|&e| e <= payload.len() as u64);
    let Some(end) = end else {
        return Err(Error::Truncated(format!("blob of '{name}' extends past end of payload")));
    };
    let bytes = &payload[r.offset as usize..end as usize];
    let computed = crc32fast::hash(bytes);
    if computed != r.crc32 {
        return Err(Error::ChecksumMismatch { name: name.to_string(), expected: r.crc32, computed });
    }
    Ok(bytes)
}

/// Alignment gaps between blobs, and after the last one, must be zero.
pub fn check_padding(payload: &[u8], refs: &[BlobRef]) -> Result<()> {
    let mut spans: Vec<(u64, u64)> = refs.iter().map(|r| (r.offset, r.offset + r.byte_len)).collect();
    spans.sort_unstable();
    let mut cursor = 0u64;
    for (begin, end) in spans.into_iter().chain([(payload.len() as u64, payload.len() as u64)]) {
        let (from, to) = (cursor.min(payload.len() as u64), begin.min(payload.len() as u64));
        if from < to && payload[from as usize..to as usize].iter().any(|&b| b != 0) {
            return Err(Error::InvalidFormat(format!("nonzero padding in payload bytes {from}..{to}")));
        }
        cursor = cursor.max(end);
    }
    Ok(())
}

pub fn f32s_to_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn bytes_to_f32s(bytes: &[u8], name: &str) -> Result<Vec<f32>> {
    if bytes.len() % 4 != 0 {
        return Err(Error::InvalidFormat(format!("'{name}': f32 blob length {} not a multiple of 4", bytes.len())));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
}
