//! `.nsf` feature tensors.
//!
//! Layout: the magic `NSF1`, then `H'`, `W'`, `C'` as little-endian `u32`,
//! then `H'·W'·C'` little-endian `f32` in row-major `(h, w, c)` order. No
//! padding and no trailer.
//!
//! Descriptor tokens use the same layout in a sidecar file: one token of
//! `C'` values per cell of an `H' × W'` grid laid over the image.

use std::fs;
use std::path::Path;

use nfseg_core::FeatureMap;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"NSF1";
pub const HEADER_LEN: usize = 16;

pub fn encode(fm: &FeatureMap) -> Result<Vec<u8>> {
    fm.validate()?;
    let mut out = Vec::with_capacity(HEADER_LEN + fm.data.len() * 4);
    out.extend_from_slice(MAGIC);
    for d in [fm.height, fm.width, fm.channels] {
        let d = u32::try_from(d).map_err(|_| Error::Usage(format!("feature dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in &fm.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Parses `bytes`; `path` only labels errors.
pub fn decode(bytes: &[u8], source_view_id: &str, path: &Path) -> Result<FeatureMap> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::format(path, "bad magic"));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(path, "truncated header"));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (h, w, c) = (dim(0), dim(1), dim(2));
    if h == 0 || w == 0 || c == 0 {
        return Err(Error::format(path, format!("zero dimension in {h}x{w}x{c}")));
    }
    let expected = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(c))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::format(path, "dimensions overflow"))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() < expected {
        return Err(Error::format(
            path,
            format!("truncated payload: {} of {expected} bytes", payload.len()),
        ));
    }
    if payload.len() > expected {
        return Err(Error::format(path, format!("{} trailing bytes", payload.len() - expected)));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::format(path, "non-finite value"));
    }
    Ok(FeatureMap::new(h, w, c, data, source_view_id)?)
}

pub fn write_feature_map(fm: &FeatureMap, path: &Path) -> Result<()> {
    let bytes = encode(fm)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a feature file; the map's `source_view_id` is the file stem.
pub fn read_feature_map(path: &Path) -> Result<FeatureMap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let id = path
        .file_name()
        .and_then(|s| s.to_str())
        .and_then(|s| s.split('.').next())
        .unwrap_or("");
    decode(&bytes, id, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeros_2x2x3_is_64_bytes() {
        let fm = FeatureMap::new(2, 2, 3, vec![0.0; 12], "v").unwrap();
        assert_eq!(encode(&fm).unwrap().len(), 64);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let fm = FeatureMap::new(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0], "v").unwrap();
        let mut bytes = encode(&fm).unwrap();
        let p = Path::new("x.nsf");
        assert!(decode(&bytes, "v", p).is_ok());
        let err = decode(&bytes[..bytes.len() - 1], "v", p).unwrap_err();
        assert!(err.to_string().contains("truncated"));
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(decode(&bytes, "v", p).unwrap_err().to_string().contains("bad magic"));
    }

    #[test]
    fn rejects_nan_payload() {
        let mut bytes = encode(&FeatureMap::new(1, 1, 1, vec![0.5], "v").unwrap()).unwrap();
        bytes[16..20].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(decode(&bytes, "v", Path::new("x")).is_err());
    }
}
