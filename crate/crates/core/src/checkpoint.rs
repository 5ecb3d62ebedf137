//! Resumable-run checkpoint container.
//!
//! Layout: an 8-byte magic, a little-endian `u32` format version, the
//! SHA-256 digest of the run config, a little-endian `u64` payload length,
//! then the JSON payload. The embedded digest lets `resume` refuse to
//! continue a run under a different config instead of silently diverging.
//! Writes go to a sibling temp file first and are renamed into place, so a
//! crash mid-write can never leave a half-written checkpoint behind.

use serde::de::DeserializeOwned;
use serde::Serialize;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 8] = *b"COTGCKPT";
pub const VERSION: u32 = 1;

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn corrupt(path: &Path, detail: impl Into<String>) -> Error {
    Error::Checkpoint { path: path.to_path_buf(), detail: detail.into() }
}

/// Atomically write a checkpoint.
pub fn write_checkpoint<T: Serialize>(
    path: impl AsRef<Path>,
    config_digest: &[u8; 32],
    payload: &T,
) -> Result<()> {
    let path = path.as_ref();
    let body = serde_json::to_vec(payload)
        .map_err(|e| corrupt(path, format!("payload does not serialize: {e}")))?;
    let mut buf = Vec::with_capacity(MAGIC.len() + 4 + 32 + 8 + body.len());
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(config_digest);
    buf.extend_from_slice(&(body.len() as u64).to_le_bytes());
    buf.extend_from_slice(&body);

    let tmp = path.with_extension("tmp");
    let mut file = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    file.write_all(&buf).map_err(|e| Error::io(&tmp, e))?;
    file.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(file);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Read a checkpoint, verifying magic, version, and config digest.
pub fn read_checkpoint<T: DeserializeOwned>(
    path: impl AsRef<Path>,
    expected_digest: &[u8; 32],
) -> Result<T> {
    let path = path.as_ref();
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut header = [0u8; 8 + 4 + 32 + 8];
    file.read_exact(&mut header)
        .map_err(|_| corrupt(path, "file too short for the checkpoint header"))?;

    if header[..8] != MAGIC {
        return Err(corrupt(path, "bad magic; not a checkpoint file"));
    }
    let version = u32::from_le_bytes(header[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(corrupt(path, format!("format version {version}, expected {VERSION}")));
    }
    let digest: [u8; 32] = header[12..44].try_into().unwrap();
    if &digest != expected_digest {
        return Err(Error::ConfigHashMismatch {
            expected: hex(expected_digest),
            found: hex(&digest),
        });
    }
    let len = u64::from_le_bytes(header[44..52].try_into().unwrap());
    let mut body = vec![0u8; usize::try_from(len).map_err(|_| corrupt(path, "payload length overflows"))?];
    file.read_exact(&mut body)
        .map_err(|_| corrupt(path, format!("payload shorter than the declared {len} bytes")))?;
    let mut rest = [0u8; 1];
    if file.read(&mut rest).map_err(|e| Error::io(path, e))? != 0 {
        return Err(corrupt(path, "trailing bytes after the payload"));
    }
    serde_json::from_slice(&body).map_err(|e| corrupt(path, format!("payload does not parse: {e}")))
}

/// Peek at the config digest stored in a checkpoint without reading the body.
pub fn read_digest(path: impl AsRef<Path>) -> Result<[u8; 32]> {
    let path = path.as_ref();
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut header = [0u8; 8 + 4 + 32];
    file.read_exact(&mut header)
        .map_err(|_| corrupt(path, "file too short for the checkpoint header"))?;
    if header[..8] != MAGIC {
        return Err(corrupt(path, "bad magic; not a checkpoint file"));
    }
    Ok(header[12..44].try_into().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Payload {
        step: u64,
        values: Vec<f64>,
        label: String,
    }

    fn payload() -> Payload {
        Payload { step: 17, values: vec![1.5, -0.25, 3.0], label: "state".into() }
    }

    #[test]
    fn round_trip_preserves_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        let digest = [7u8; 32];
        write_checkpoint(&path, &digest, &payload()).unwrap();
        let got: Payload = read_checkpoint(&path, &digest).unwrap();
        assert_eq!(got, payload());
        assert_eq!(read_digest(&path).unwrap(), digest);
        assert!(!dir.path().join("ck.tmp").exists(), "temp file must not linger");
    }

    #[test]
    fn digest_mismatch_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        write_checkpoint(&path, &[1u8; 32], &payload()).unwrap();
        let err = read_checkpoint::<Payload>(&path, &[2u8; 32]).unwrap_err();
        match err {
            Error::ConfigHashMismatch { expected, found } => {
                assert_eq!(expected, "02".repeat(32));
                assert_eq!(found, "01".repeat(32));
            }
            other => panic!("wrong error: {other}"),
        }
    }

    #[test]
    fn corruption_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        let digest = [9u8; 32];
        write_checkpoint(&path, &digest, &payload()).unwrap();
        let origin = std::fs::read(&path).unwrap();

        // Bad magic.
        let mut bytes = origin.clone();
        bytes[0] ^= 0xff;
        std::fs::write(&path, &bytes).unwrap();
        assert!(read_checkpoint::<Payload>(&path, &digest).is_err());

        // Unsupported version.
        let mut bytes = origin.clone();
        bytes[8] = 99;
        std::fs::write(&path, &bytes).unwrap();
        let msg = read_checkpoint::<Payload>(&path, &digest).unwrap_err().to_string();
        assert!(msg.contains("version"), "{msg}");

        // Truncated payload.
        let bytes = &origin[..origin.len() - 3];
        std::fs::write(&path, bytes).unwrap();
        assert!(read_checkpoint::<Payload>(&path, &digest).is_err());

        // Trailing garbage.
        let mut bytes = origin.clone();
        bytes.push(0);
        std::fs::write(&path, &bytes).unwrap();
        let msg = read_checkpoint::<Payload>(&path, &digest).unwrap_err().to_string();
        assert!(msg.contains("trailing"), "{msg}");
    }
}
