//! Binary checkpoint container.
//!
//! ```text
//! magic        8 bytes  "IPCNCKPT"
//! version      u32 LE   (1)
//! config_len   u64 LE
//! config       UTF-8 `key=value` lines: the architecture, then `meta.*` keys
//! param_count  u32 LE
//! per parameter, in name order:
//!   name_len u32 LE, name UTF-8, ndim u32 LE, dims u64 LE × ndim,
//!   values f64 LE × product(dims)
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Architecture, SegModel};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"IPCNCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub architecture: Architecture,
    pub meta: BTreeMap<String, String>,
    pub model: SegModel,
}

impl Checkpoint {
    pub fn new(model: SegModel, num_points: usize) -> Self {
        Checkpoint {
            architecture: model.architecture(num_points),
            meta: BTreeMap::new(),
            model,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut text = self.architecture.to_text();
        for (k, v) in &self.meta {
            text.push_str(&format!("meta.{k}={v}\n"));
        }
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(text.len() as u64).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        let params = self.model.params();
        out.extend_from_slice(&(params.len() as u32).to_le_bytes());
        for (name, t) in params.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic bytes".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let len = r.u64()? as usize;
        let text = std::str::from_utf8(r.take(len)?).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let architecture = Architecture::from_text(text)?;
        let meta = text
            .lines()
            .filter_map(|l| l.strip_prefix("meta."))
            .filter_map(|l| l.split_once('='))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();

        // The architecture fixes names and shapes; the stored blocks must match.
        let mut model = SegModel::build(&architecture, 0)?;
        let count = r.u32()? as usize;
        if count != model.params().len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {count}",
                model.params().len()
            )));
        }
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|e| Error::Checkpoint(e.to_string()))?
                .to_string();
            let ndim = r.u32()? as usize;
            let shape = (0..ndim)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let data = r
                .take(numel * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let slot = model
                .params_mut()
                .get_mut(&name)
                .ok_or_else(|| Error::Checkpoint(format!("unexpected parameter `{name}`")))?;
            if slot.shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` has shape {shape:?}, architecture expects {:?}",
                    slot.shape()
                )));
            }
            *slot = Tensor::new(shape, data)?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Checkpoint {
            architecture,
            meta,
            model,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelKind;
    use crate::pointnet::PointNetConfig;

    #[test]
    fn round_trip_preserves_model_and_meta() {
        for kind in [ModelKind::PointNet, ModelKind::IpcNet] {
            let arch = Architecture::new(kind, PointNetConfig::toy(3), 128);
            let model = SegModel::build(&arch, 42).unwrap();
            let mut ck = Checkpoint::new(model, 128);
            ck.meta.insert("seed".into(), "42".into());
            let bytes = ck.to_bytes();
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            assert_eq!(back, ck);
            assert_eq!(back.to_bytes(), bytes);
        }
    }

    #[test]
    fn rejects_corruption() {
        let arch = Architecture::new(ModelKind::PointNet, PointNetConfig::toy(2), 16);
        let bytes = Checkpoint::new(SegModel::build(&arch, 1).unwrap(), 16).to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(Checkpoint::from_bytes(&long).is_err());
    }
}
