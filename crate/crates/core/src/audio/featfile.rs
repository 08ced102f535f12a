//! Binary feature cache: 16-byte header (`SFMTFEAT`, version u16, frames
//! u32, dims u16, all little-endian) followed by row-major little-endian f32.

use std::fs;
use std::path::Path;

use crate::audio::mel::FeatureMatrix;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SFMTFEAT";
pub const VERSION: u16 = 1;
const HEADER: usize = 16;

pub fn encode_features(fm: &FeatureMatrix) -> Result<Vec<u8>> {
    if fm.frames() == 0 {
        return Err(Error::Length("feature matrix has no frames".into()));
    }
    let frames = u32::try_from(fm.frames()).map_err(|_| Error::Length("too many frames".into()))?;
    let dims = u16::try_from(fm.dims()).map_err(|_| Error::Length("too many dims".into()))?;
    let mut out = Vec::with_capacity(HEADER + fm.data().len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&frames.to_le_bytes());
    out.extend_from_slice(&dims.to_le_bytes());
    for v in fm.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureMatrix> {
    if bytes.len() < HEADER {
        return Err(Error::format("truncated", "file shorter than header"));
    }
    if &bytes[0..8] != MAGIC {
        return Err(Error::format("magic", "not an SFMTFEAT file"));
    }
    let version = u16::from_le_bytes([bytes[8], bytes[9]]);
    if version != VERSION {
        return Err(Error::format("version", format!("expected {VERSION}, got {version}")));
    }
    let frames = u32::from_le_bytes([bytes[10], bytes[11], bytes[12], bytes[13]]) as usize;
    let dims = u16::from_le_bytes([bytes[14], bytes[15]]) as usize;
    let expected = HEADER + frames * dims * 4;
    if bytes.len() != expected {
        return Err(Error::format(
            "truncated",
            format!("expected {expected} bytes, got {}", bytes.len()),
        ));
    }
    if frames == 0 {
        return Err(Error::Length("feature file has no frames".into()));
    }
    let data = bytes[HEADER..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    FeatureMatrix::new(frames, dims, data)
}

pub fn save_features(fm: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_features(fm)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes)
}
