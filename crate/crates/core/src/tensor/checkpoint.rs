//! Named-tensor archive: a JSON header (names, shapes, metadata) followed by
//! one contiguous little-endian 64-bit payload in header order.
//!
//! Layout: 8-byte magic, u32-LE header length, header JSON, payload.
//! Writing the same tensors twice produces byte-identical files.

use std::fmt;
use std::fs::File;
use std::io::{self, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"PJFITCK1";

#[derive(Debug)]
pub enum ArchiveError {
    Io(io::Error),
    BadMagic,
    BadHeader(String),
    PayloadLenMismatch { expected: usize, got: usize },
}

impl fmt::Display for ArchiveError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ArchiveError::Io(e) => write!(f, "archive io error: {e}"),
            ArchiveError::BadMagic => write!(f, "not a tensor archive (bad magic)"),
            ArchiveError::BadHeader(msg) => write!(f, "bad archive header: {msg}"),
            ArchiveError::PayloadLenMismatch { expected, got } => {
                write!(f, "payload length {got} bytes, header implies {expected}")
            }
        }
    }
}

impl std::error::Error for ArchiveError {}

impl From<io::Error> for ArchiveError {
    fn from(e: io::Error) -> Self {
        ArchiveError::Io(e)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct HeaderEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    meta: serde_json::Value,
    tensors: Vec<HeaderEntry>,
}

/// Named tensors as stored in (or loaded from) an archive.
pub type NamedTensors<S> = Vec<(String, Tensor<S>)>;

/// One deserialized archive entry.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchiveEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Serialize named tensors plus free-form metadata.
pub fn write_archive<S: Scalar>(
    path: &Path,
    entries: &[(String, Tensor<S>)],
    meta: &serde_json::Value,
) -> Result<(), ArchiveError> {
    let header = Header {
        version: 1,
        meta: meta.clone(),
        tensors: entries
            .iter()
            .map(|(name, t)| HeaderEntry { name: name.clone(), shape: t.shape().to_vec() })
            .collect(),
    };
    let header_bytes =
        serde_json::to_vec(&header).map_err(|e| ArchiveError::BadHeader(e.to_string()))?;

    let mut file = File::create(path)?;
    file.write_all(MAGIC)?;
    file.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    file.write_all(&header_bytes)?;
    let mut payload: Vec<u8> = Vec::new();
    for (_, t) in entries {
        for v in t.values().iter() {
            payload.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    file.write_all(&payload)?;
    Ok(())
}

/// Read back every entry and the metadata.
pub fn read_archive(path: &Path) -> Result<(Vec<ArchiveEntry>, serde_json::Value), ArchiveError> {
    let mut file = File::open(path)?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    if bytes.len() < MAGIC.len() + 4 || &bytes[..8] != MAGIC {
        return Err(ArchiveError::BadMagic);
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let header_end = 12 + header_len;
    if bytes.len() < header_end {
        return Err(ArchiveError::BadHeader("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[12..header_end])
        .map_err(|e| ArchiveError::BadHeader(e.to_string()))?;
    if header.version != 1 {
        return Err(ArchiveError::BadHeader(format!("unsupported version {}", header.version)));
    }

    let total_elems: usize = header.tensors.iter().map(|e| e.shape.iter().product::<usize>()).sum();
    let payload = &bytes[header_end..];
    if payload.len() != total_elems * 8 {
        return Err(ArchiveError::PayloadLenMismatch {
            expected: total_elems * 8,
            got: payload.len(),
        });
    }

    let mut entries = Vec::with_capacity(header.tensors.len());
    let mut offset = 0;
    for he in header.tensors {
        let n: usize = he.shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for i in 0..n {
            let chunk: [u8; 8] = payload[offset + i * 8..offset + (i + 1) * 8].try_into().unwrap();
            data.push(f64::from_le_bytes(chunk));
        }
        offset += n * 8;
        entries.push(ArchiveEntry { name: he.name, shape: he.shape, data });
    }
    Ok((entries, header.meta))
}

/// Read and convert entries to tensors of scalar type `S`.
pub fn load_archive<S: Scalar>(
    path: &Path,
) -> Result<(NamedTensors<S>, serde_json::Value), ArchiveError> {
    let (entries, meta) = read_archive(path)?;
    let tensors = entries
        .into_iter()
        .map(|e| {
            let data: Vec<S> = e.data.iter().map(|&v| S::from_f64(v)).collect();
            let t = Tensor::leaf(data, e.shape).expect("archive shape consistent");
            (e.name, t)
        })
        .collect();
    Ok((tensors, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn archive_round_trip_is_exact() {
        let dir = std::env::temp_dir().join("pjfit-archive-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("rt.ckpt");

        let a = Tensor::<f64>::leaf(vec![1.5, -2.25, 1e-300, 0.1], vec![2, 2]).unwrap();
        let b = Tensor::<f64>::leaf(vec![3.0], vec![1]).unwrap();
        let meta = serde_json::json!({"kind": "test", "step": 7});
        write_archive(&path, &[("a".into(), a.clone()), ("b".into(), b.clone())], &meta).unwrap();

        let (entries, got_meta) = read_archive(&path).unwrap();
        assert_eq!(got_meta, meta);
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[0].name, "a");
        assert_eq!(entries[0].shape, vec![2, 2]);
        assert_eq!(entries[0].data, a.to_vec());
        assert_eq!(entries[1].data, b.to_vec());
    }

    #[test]
    fn writing_twice_is_byte_identical() {
        let dir = std::env::temp_dir().join("pjfit-archive-test");
        std::fs::create_dir_all(&dir).unwrap();
        let p1 = dir.join("d1.ckpt");
        let p2 = dir.join("d2.ckpt");
        let t = Tensor::<f64>::leaf(vec![0.25, -0.125, 9.75], vec![3]).unwrap();
        let meta = serde_json::json!({"z": 1, "a": 2});
        write_archive(&p1, &[("t".into(), t.clone())], &meta).unwrap();
        write_archive(&p2, &[("t".into(), t)], &meta).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = std::env::temp_dir().join("pjfit-archive-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("junk.ckpt");
        std::fs::write(&path, b"not an archive at all").unwrap();
        assert!(matches!(read_archive(&path), Err(ArchiveError::BadMagic)));
    }
}
