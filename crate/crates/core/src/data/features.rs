//! Region-feature files.
//!
//! ```text
//! offset 0   "DPRNFEAT"
//! offset 8   u16 version
//! offset 10  u16 k (objects)
//! offset 12  u32 D (descriptor width)
//! offset 16  k·D f32 descriptors, row-major
//!            k·4 f32 boxes (width, height, center x, center y)
//! ```
//!
//! All integers and reals are little-endian. Values are widened to `f64` on
//! load and narrowed back on save, so a load/save cycle is byte-exact.

use std::path::Path;

use crate::encoders::ImageInstance;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"DPRNFEAT";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: u64 = 16;

/// File size for `k` objects of width `feature_dim`.
pub fn file_len(k: usize, feature_dim: usize) -> u64 {
    HEADER_LEN + (k as u64) * (feature_dim as u64 + 4) * 4
}

pub fn encode(image: &ImageInstance) -> Result<Vec<u8>> {
    let (k, d) = (image.num_objects(), image.feature_dim());
    let k16 = u16::try_from(k)
        .map_err(|_| Error::Validation(format!("{k} objects exceed the format limit")))?;
    let d32 = u32::try_from(d)
        .map_err(|_| Error::Validation(format!("descriptor width {d} too large")))?;
    let mut out = Vec::with_capacity(file_len(k, d) as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&k16.to_le_bytes());
    out.extend_from_slice(&d32.to_le_bytes());
    for &v in image
        .descriptors()
        .data()
        .iter()
        .chain(image.boxes().data())
    {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8], id: &str, path: &Path) -> Result<ImageInstance> {
    let truncated = |expected: u64| Error::Truncated {
        path: path.into(),
        expected,
        actual: bytes.len() as u64,
    };
    if bytes.len() < 8 {
        return Err(truncated(HEADER_LEN));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::BadMagic {
            path: path.into(),
            found: bytes[..8].to_vec(),
        });
    }
    if bytes.len() < HEADER_LEN as usize {
        return Err(truncated(HEADER_LEN));
    }
    let version = u16::from_le_bytes([bytes[8], bytes[9]]);
    if version != VERSION {
        return Err(Error::VersionMismatch {
            path: path.into(),
            found: version.into(),
            expected: VERSION.into(),
        });
    }
    let k = u16::from_le_bytes([bytes[10], bytes[11]]) as usize;
    let d = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    if k == 0 || d == 0 {
        return Err(Error::malformed(
            path,
            format!("empty feature block (k = {k}, D = {d})"),
        ));
    }
    let expected = file_len(k, d);
    if (bytes.len() as u64) < expected {
        return Err(truncated(expected));
    }
    if bytes.len() as u64 > expected {
        return Err(Error::malformed(
            path,
            format!(
                "{} trailing bytes after {expected}",
                bytes.len() as u64 - expected
            ),
        ));
    }
    let mut values = bytes[HEADER_LEN as usize..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64);
    let descriptors: Vec<f64> = values.by_ref().take(k * d).collect();
    let boxes: Vec<f64> = values.collect();
    if let Some((pos, &value)) = boxes
        .iter()
        .enumerate()
        .find(|(_, v)| !(0.0..=1.0).contains(*v))
    {
        return Err(Error::BoxOutOfRange {
            path: path.into(),
            object: pos / 4,
            value,
        });
    }
    if descriptors.iter().any(|v| !v.is_finite()) {
        return Err(Error::malformed(path, "non-finite descriptor"));
    }
    ImageInstance::new(
        id,
        Tensor::new(k, d, descriptors)?,
        Tensor::new(k, 4, boxes)?,
    )
}

pub fn save_features(image: &ImageInstance, path: &Path) -> Result<()> {
    std::fs::write(path, encode(image)?).map_err(|e| Error::io(path, e))
}

/// Loads a feature file; the image id is the file stem.
pub fn load_features(path: &Path) -> Result<ImageInstance> {
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    load_features_as(path, &id)
}

pub fn load_features_as(path: &Path, id: &str) -> Result<ImageInstance> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, id, path)
}
