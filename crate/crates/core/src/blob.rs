//! Checksummed binary blobs.
//!
//! Layout: a 4-byte tag and a little-endian `u32` format version (8 bytes
//! together), the little-endian payload, then a little-endian CRC-64/XZ of
//! everything before it.

use std::fs;
use std::path::Path;

use crc::{Crc, CRC_64_XZ};

use crate::error::{Error, Result};

pub const BLOB_VERSION: u32 = 1;

const CRC64: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);
const HEADER: usize = 8;
const TRAILER: usize = 8;

pub fn checksum(bytes: &[u8]) -> u64 {
    CRC64.checksum(bytes)
}

fn encode(tag: [u8; 4], payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER + payload.len() + TRAILER);
    out.extend_from_slice(&tag);
    out.extend_from_slice(&BLOB_VERSION.to_le_bytes());
    out.extend_from_slice(payload);
    let sum = checksum(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    out
}

fn decode<'a>(path: &Path, tag: [u8; 4], bytes: &'a [u8], expected_payload: Option<usize>) -> Result<&'a [u8]> {
    if bytes.len() < HEADER + TRAILER {
        return Err(Error::Truncated {
            path: path.into(),
            found: bytes.len(),
            expected: HEADER + TRAILER + expected_payload.unwrap_or(0),
        });
    }
    if bytes[..4] != tag {
        return Err(Error::BadMagic { path: path.into() });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != BLOB_VERSION {
        return Err(Error::VersionMismatch {
            path: path.into(),
            found: version,
            expected: BLOB_VERSION,
        });
    }
    if let Some(n) = expected_payload {
        if bytes.len() != HEADER + n + TRAILER {
            return Err(Error::Truncated {
                path: path.into(),
                found: bytes.len(),
                expected: HEADER + n + TRAILER,
            });
        }
    }
    let body_end = bytes.len() - TRAILER;
    let stored = u64::from_le_bytes(bytes[body_end..].try_into().expect("8 bytes"));
    let computed = checksum(&bytes[..body_end]);
    if stored != computed {
        return Err(Error::Checksum {
            path: path.into(),
            stored,
            computed,
        });
    }
    Ok(&bytes[HEADER..body_end])
}

pub fn encode_f32(tag: [u8; 4], values: &[f32]) -> Vec<u8> {
    let payload: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    encode(tag, &payload)
}

pub fn write_f32(path: &Path, tag: [u8; 4], values: &[f32]) -> Result<()> {
    fs::write(path, encode_f32(tag, values)).map_err(|e| Error::io(path, e))
}

pub fn write_u8(path: &Path, tag: [u8; 4], values: &[u8]) -> Result<()> {
    fs::write(path, encode(tag, values)).map_err(|e| Error::io(path, e))
}

/// Read an `f32` blob; `expected_len` is the element count, if known.
pub fn read_f32(path: &Path, tag: [u8; 4], expected_len: Option<usize>) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let payload = decode(path, tag, &bytes, expected_len.map(|n| n * 4))?;
    if payload.len() % 4 != 0 {
        return Err(Error::Malformed {
            path: path.into(),
            what: "f32 blob",
            detail: format!("payload of {} bytes is not a multiple of 4", payload.len()),
        });
    }
    Ok(payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect())
}

pub fn read_u8(path: &Path, tag: [u8; 4], expected_len: Option<usize>) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(path, tag, &bytes, expected_len).map(<[u8]>::to_vec)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TAG: [u8; 4] = *b"TEST";

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.bin");
        let values = [0.0f32, -0.0, 1.5, f32::MIN_POSITIVE, 293.0, 6500.0];
        write_f32(&p, TAG, &values).unwrap();
        let back = read_f32(&p, TAG, Some(values.len())).unwrap();
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&values));
    }

    #[test]
    fn corrupted_byte_is_checksum_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.bin");
        write_u8(&p, TAG, &[1, 0, 1, 1]).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        bytes[9] ^= 0x40;
        fs::write(&p, bytes).unwrap();
        assert!(matches!(read_u8(&p, TAG, None), Err(Error::Checksum { .. })));
    }

    #[test]
    fn truncated_and_version_errors_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.bin");
        write_f32(&p, TAG, &[1.0, 2.0]).unwrap();
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(read_f32(&p, TAG, Some(2)), Err(Error::Truncated { .. })));

        let mut v2 = bytes.clone();
        v2[4] = 2;
        fs::write(&p, v2).unwrap();
        assert!(matches!(read_f32(&p, TAG, Some(2)), Err(Error::VersionMismatch { found: 2, .. })));

        fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_f32(&p, *b"NOPE", Some(2)), Err(Error::BadMagic { .. })));
    }
}
