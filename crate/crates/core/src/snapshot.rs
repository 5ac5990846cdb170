//! Checksummed JSON snapshot files.
//!
//! Layout: one line of JSON payload, then a trailer line
//! `crc32 <8 lowercase hex digits>` computed over the payload bytes.
//! The payload carries a top-level `schema_version`.

use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

const TRAILER_PREFIX: &str = "crc32 ";

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt snapshot: {0}")]
    Corrupt(String),
    #[error("unsupported schema version {found} (supported: {supported})")]
    SchemaVersionUnsupported { found: u64, supported: u64 },
}

pub fn encode<T: Serialize>(doc: &T) -> Vec<u8> {
    let payload = serde_json::to_vec(doc).expect("snapshot documents serialize");
    let crc = crc32fast::hash(&payload);
    let mut out = payload;
    out.push(b'\n');
    out.extend_from_slice(format!("{TRAILER_PREFIX}{crc:08x}\n").as_bytes());
    out
}

/// Verifies the trailer and schema version, then deserializes.
pub fn decode<T: DeserializeOwned>(bytes: &[u8], schema_version: u64) -> Result<T, SnapshotError> {
    let corrupt = |m: &str| SnapshotError::Corrupt(m.to_string());
    let body = bytes
        .strip_suffix(b"\n")
        .ok_or_else(|| corrupt("missing trailing newline"))?;
    let split = body
        .iter()
        .rposition(|&b| b == b'\n')
        .ok_or_else(|| corrupt("missing checksum trailer"))?;
    let (payload, trailer) = (&body[..split], &body[split + 1..]);
    let trailer = std::str::from_utf8(trailer).map_err(|_| corrupt("trailer is not UTF-8"))?;
    let hex = trailer
        .strip_prefix(TRAILER_PREFIX)
        .ok_or_else(|| corrupt("malformed checksum trailer"))?;
    let expected = u32::from_str_radix(hex, 16).map_err(|_| corrupt("malformed checksum"))?;
    if hex.len() != 8 || crc32fast::hash(payload) != expected {
        return Err(corrupt("checksum mismatch"));
    }
    let value: serde_json::Value =
        serde_json::from_slice(payload).map_err(|e| SnapshotError::Corrupt(e.to_string()))?;
    let found = value
        .get("schema_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| corrupt("missing schema_version"))?;
    if found != schema_version {
        return Err(SnapshotError::SchemaVersionUnsupported {
            found,
            supported: schema_version,
        });
    }
    serde_json::from_value(value).map_err(|e| SnapshotError::Corrupt(e.to_string()))
}

/// Writes via a temporary sibling and rename so readers never see a torn file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(d) = dir {
        std::fs::create_dir_all(d)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}

pub fn save<T: Serialize>(path: &Path, doc: &T) -> Result<(), SnapshotError> {
    Ok(write_atomic(path, &encode(doc))?)
}

pub fn load<T: DeserializeOwned>(path: &Path, schema_version: u64) -> Result<T, SnapshotError> {
    decode(&std::fs::read(path)?, schema_version)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Doc {
        schema_version: u64,
        xs: Vec<f64>,
    }

    fn doc() -> Doc {
        Doc {
            schema_version: 1,
            xs: vec![0.1, -2.5e-7, 1.0 / 3.0],
        }
    }

    #[test]
    fn roundtrip() {
        let back: Doc = decode(&encode(&doc()), 1).unwrap();
        assert_eq!(back, doc());
    }

    #[test]
    fn every_single_byte_flip_is_detected() {
        let bytes = encode(&doc());
        for i in 0..bytes.len() {
            let mut b = bytes.clone();
            b[i] ^= 0x01;
            assert!(decode::<Doc>(&b, 1).is_err(), "flip at {i} accepted");
        }
    }

    #[test]
    fn truncation_detected() {
        let bytes = encode(&doc());
        for cut in [0, 1, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(
                decode::<Doc>(&bytes[..cut], 1),
                Err(SnapshotError::Corrupt(_))
            ));
        }
    }

    #[test]
    fn schema_version_checked() {
        let d = Doc {
            schema_version: 9,
            xs: vec![],
        };
        assert!(matches!(
            decode::<Doc>(&encode(&d), 1),
            Err(SnapshotError::SchemaVersionUnsupported { found: 9, .. })
        ));
    }
}
