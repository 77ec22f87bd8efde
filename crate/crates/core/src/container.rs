//! Versioned binary container shared by classifier and detector files:
//!
//! ```text
//! magic (8 bytes) | version u32 | descriptor length u64 | value count u64
//! | descriptor JSON | value count × f32 | checksum u64
//! ```
//!
//! All integers and floats are little-endian. The checksum is the first eight
//! bytes of the SHA-256 digest of everything before it.

use sha2::{Digest, Sha256};

use crate::error::LoadError;

const HEADER_LEN: usize = 8 + 4 + 8 + 8;

pub(crate) fn checksum(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

pub(crate) fn encode(magic: &[u8; 8], version: u32, descriptor: &[u8], values: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + descriptor.len() + values.len() * 4 + 8);
    out.extend_from_slice(magic);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(descriptor.len() as u64).to_le_bytes());
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    out.extend_from_slice(descriptor);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let sum = checksum(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    out
}

/// Splits a container into its descriptor bytes and float payload.
pub(crate) fn decode<'a>(magic: &[u8; 8], version: u32, bytes: &'a [u8]) -> Result<(&'a [u8], Vec<f32>), LoadError> {
    if bytes.len() < 8 || &bytes[..8] != magic {
        if bytes.len() < 8 && magic.starts_with(bytes) {
            return Err(LoadError::Truncated("file shorter than its magic".into()));
        }
        return Err(LoadError::BadMagic { expected: String::from_utf8_lossy(magic).trim_end_matches('\0').to_string() });
    }
    if bytes.len() < HEADER_LEN {
        return Err(LoadError::Truncated("incomplete header".into()));
    }
    let found = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if found != version {
        return Err(LoadError::VersionMismatch { found, expected: version });
    }
    let desc_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(bytes[20..28].try_into().unwrap()) as usize;
    let body_end = desc_len
        .checked_add(count.checked_mul(4).ok_or_else(|| LoadError::Truncated("value count overflow".into()))?)
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| LoadError::Truncated("length overflow".into()))?;
    if bytes.len() < body_end + 8 {
        return Err(LoadError::Truncated(format!("expected {} bytes, found {}", body_end + 8, bytes.len())));
    }
    if bytes.len() > body_end + 8 {
        return Err(LoadError::Descriptor(format!("{} trailing bytes", bytes.len() - body_end - 8)));
    }
    let stored = u64::from_le_bytes(bytes[body_end..body_end + 8].try_into().unwrap());
    let computed = checksum(&bytes[..body_end]);
    if stored != computed {
        return Err(LoadError::Checksum { stored, computed });
    }
    let descriptor = &bytes[HEADER_LEN..HEADER_LEN + desc_len];
    let values = bytes[HEADER_LEN + desc_len..body_end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((descriptor, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MAGIC: &[u8; 8] = b"TESTCONT";

    #[test]
    fn round_trip_and_distinct_failures() {
        let bytes = encode(MAGIC, 3, b"{\"a\":1}", &[1.5, -2.0, f32::MIN_POSITIVE]);
        let (desc, vals) = decode(MAGIC, 3, &bytes).unwrap();
        assert_eq!(desc, b"{\"a\":1}");
        assert_eq!(vals, vec![1.5, -2.0, f32::MIN_POSITIVE]);

        assert!(matches!(decode(MAGIC, 4, &bytes), Err(LoadError::VersionMismatch { found: 3, expected: 4 })));
        assert!(matches!(decode(b"OTHERMAG", 3, &bytes), Err(LoadError::BadMagic { .. })));
        assert!(matches!(decode(MAGIC, 3, &bytes[..bytes.len() - 5]), Err(LoadError::Truncated(_))));
        let mut corrupt = bytes.clone();
        let n = corrupt.len();
        corrupt[n - 12] ^= 0x40;
        assert!(matches!(decode(MAGIC, 3, &corrupt), Err(LoadError::Checksum { .. })));
    }
}
