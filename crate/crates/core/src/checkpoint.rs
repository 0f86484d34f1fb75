//! Versioned binary checkpoints.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "DPRNCKPT"  u32 version  u8 flags (bit 0: inference uses the RVE)
//! u32 config length, config as key=value text
//! u32 block count, then per block:
//!     u16 name length, name, u32 rows, u32 cols, rows·cols f64
//! ```
//!
//! Blocks are written in the fixed parameter walk order, so saving a loaded
//! checkpoint reproduces the file byte for byte.

use std::collections::HashMap;
use std::path::Path;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::params::{Dims, ModelParams};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"DPRNCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: Config,
    pub rve: bool,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn new(config: Config, model: &Model) -> Self {
        Self {
            config,
            rve: model.config.rve,
            params: model.params.clone(),
        }
    }

    pub fn model(&self) -> Result<Model> {
        let dims = self.params.dims();
        let mut mc = self.config.model_config(dims.vocab, dims.image_features);
        mc.rve = self.rve;
        Model::new(mc, self.params.clone())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(u8::from(self.rve));
        let cfg = self.config.to_text();
        out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        out.extend_from_slice(cfg.as_bytes());
        let blocks = self.params.named();
        out.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
        for (name, t) in blocks {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
            out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader {
            bytes,
            pos: 0,
            path,
        };
        let magic = r.take(8)?;
        if magic != MAGIC {
            return Err(Error::BadMagic {
                path: path.into(),
                found: magic.to_vec(),
            });
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::VersionMismatch {
                path: path.into(),
                found: version,
                expected: VERSION,
            });
        }
        let rve = match r.take(1)?[0] {
            0 => false,
            1 => true,
            f => return Err(Error::malformed(path, format!("unknown flags {f:#x}"))),
        };
        let cfg_len = r.u32()? as usize;
        let cfg_text = std::str::from_utf8(r.take(cfg_len)?)
            .map_err(|_| Error::malformed(path, "config is not UTF-8"))?;
        let config = Config::resolve(Some(cfg_text), &[])?;

        let count = r.u32()? as usize;
        let mut blocks = HashMap::new();
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::malformed(path, "block name is not UTF-8"))?
                .to_string();
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let raw = r.take(rows * cols * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new(rows, cols, data)?;
            if blocks.insert(name.clone(), t).is_some() {
                return Err(Error::malformed(path, format!("duplicate block {name}")));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::malformed(
                path,
                format!("{} trailing bytes", bytes.len() - r.pos),
            ));
        }

        let dim_of = |name: &str, axis: usize| {
            blocks
                .get(name)
                .map(|t: &Tensor| t.shape()[axis])
                .ok_or_else(|| Error::malformed(path, format!("missing block {name}")))
        };
        let dims = Dims {
            vocab: dim_of("text.embedding", 0)?,
            image_features: dim_of("image.feature_w", 0)?,
            word_dim: dim_of("text.embedding", 1)?,
            hidden: dim_of("image.feature_w", 1)?,
        };
        let mut params = ModelParams::shapes(dims).map(&mut |s| Tensor::zeros(s[0], s[1]));
        for (name, slot) in params.named_mut() {
            let t = blocks
                .remove(&name)
                .ok_or_else(|| Error::malformed(path, format!("missing block {name}")))?;
            if t.shape() != slot.shape() {
                return Err(Error::malformed(
                    path,
                    format!(
                        "block {name} has shape {:?}, expected {:?}",
                        t.shape(),
                        slot.shape()
                    ),
                ));
            }
            *slot = t;
        }
        if let Some(extra) = blocks.keys().next() {
            return Err(Error::malformed(path, format!("unexpected block {extra}")));
        }
        params
            .validate()
            .map_err(|e| Error::malformed(path, e.to_string()))?;
        Ok(Self {
            config,
            rve,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Truncated {
                path: self.path.into(),
                expected: (self.pos as u64).saturating_add(n as u64),
                actual: self.bytes.len() as u64,
            });
        };
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::config::Profile;

    fn sample() -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dims = Dims {
            vocab: 7,
            image_features: 5,
            word_dim: 3,
            hidden: 4,
        };
        let mut config = Config::defaults(Profile::Flickr);
        config.h = 4;
        config.q = 3;
        Checkpoint {
            config,
            rve: true,
            params: ModelParams::init(&mut rng, dims),
        }
    }

    #[test]
    fn byte_round_trip() {
        let ck = sample();
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
        assert!(back.model().unwrap().config.rve);
    }

    #[test]
    fn typed_errors() {
        let bytes = sample().to_bytes();
        let p = Path::new("x.ckpt");
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            Checkpoint::from_bytes(&bad, p),
            Err(Error::BadMagic { .. })
        ));
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(matches!(
            Checkpoint::from_bytes(&bad, p),
            Err(Error::VersionMismatch { found: 9, .. })
        ));
        let cut = &bytes[..bytes.len() - 3];
        match Checkpoint::from_bytes(cut, p) {
            Err(Error::Truncated {
                expected, actual, ..
            }) => {
                assert_eq!(actual, cut.len() as u64);
                assert_eq!(expected, bytes.len() as u64);
            }
            other => panic!("{other:?}"),
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(
            Checkpoint::from_bytes(&long, p),
            Err(Error::Malformed { .. })
        ));
    }
}
