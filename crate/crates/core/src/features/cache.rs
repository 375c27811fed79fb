//! Feature cache container.
//!
//! All integers and floats little-endian:
//!
//! | offset | size  | field                              |
//! |--------|-------|------------------------------------|
//! | 0      | 4     | magic `FSFM`                       |
//! | 4      | 4     | u32 version (1)                    |
//! | 8      | 4     | u32 frames `T`                     |
//! | 12     | 4     | u32 bins `F`                       |
//! | 16     | 8     | f64 frame rate (frames/s)          |
//! | 24     | 1     | u8 kind: 0 = logmel, 1 = pcen      |
//! | 25     | 3     | zero                               |
//! | 28     | 4·T·F | f32 data, row-major (frame-major)  |

use std::path::Path;

use super::{FeatureError, FeatureKind, FeatureMatrix};

pub const CACHE_MAGIC: [u8; 4] = *b"FSFM";
pub const CACHE_VERSION: u32 = 1;
const HEADER_LEN: usize = 28;

pub fn write_feature_cache(feat: &FeatureMatrix, path: impl AsRef<Path>) -> Result<(), FeatureError> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * feat.data().len());
    buf.extend_from_slice(&CACHE_MAGIC);
    buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(feat.frames() as u32).to_le_bytes());
    buf.extend_from_slice(&(feat.bins() as u32).to_le_bytes());
    buf.extend_from_slice(&feat.frame_rate().to_le_bytes());
    buf.push(match feat.kind() {
        FeatureKind::LogMel => 0,
        FeatureKind::Pcen => 1,
    });
    buf.extend_from_slice(&[0u8; 3]);
    for &v in feat.data() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    std::fs::write(path, buf).map_err(|e| FeatureError::Cache {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

pub fn read_feature_cache(path: impl AsRef<Path>) -> Result<FeatureMatrix, FeatureError> {
    let path = path.as_ref();
    let err = |detail: String| FeatureError::Cache {
        path: path.to_path_buf(),
        detail,
    };
    let bytes = std::fs::read(path).map_err(|e| err(e.to_string()))?;
    if bytes.len() < HEADER_LEN || bytes[..4] != CACHE_MAGIC {
        return Err(err("not a feature cache".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != CACHE_VERSION {
        return Err(err(format!("unsupported version {version}")));
    }
    let frames = u32_at(8) as usize;
    let bins = u32_at(12) as usize;
    let frame_rate = f64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let kind = match bytes[24] {
        0 => FeatureKind::LogMel,
        1 => FeatureKind::Pcen,
        k => return Err(err(format!("unknown feature kind {k}"))),
    };
    let expected = HEADER_LEN + 4 * frames * bins;
    if bytes.len() != expected {
        return Err(err(format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    FeatureMatrix::new(frames, bins, data, frame_rate, kind).map_err(|e| err(e.to_string()))
}
