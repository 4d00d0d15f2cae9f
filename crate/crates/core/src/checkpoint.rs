//! Binary checkpoint container.
//!
//! All integers little-endian:
//!
//! ```text
//! magic        8 bytes   "SPKHCKPT"
//! version      u32       FORMAT_VERSION
//! header_len   u32
//! header       header_len bytes of UTF-8 JSON:
//!              {"spec": ModelSpec, "norm": {"mean": [..], "std": [..]} | null,
//!               "split_seed": u64 | null}
//! array_count  u32
//! per array:
//!   name_len   u16, name (UTF-8, "<layer index>.weight" | "<layer index>.bias")
//!   rank       u32, dims rank x u32
//!   data       prod(dims) x f32 LE, row-major
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::NormStats;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::model::{Model, ModelSpec};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"SPKHCKPT";
pub const FORMAT_VERSION: u32 = 1;

/// Preprocessing needed to feed the model the data it was trained on.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub norm: Option<NormStats>,
    pub split_seed: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    spec: ModelSpec,
    #[serde(flatten)]
    meta: CheckpointMeta,
}

pub fn to_bytes(model: &Model<f32>, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    let header = Header {
        spec: model.spec().clone(),
        meta: meta.clone(),
    };
    let spec = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(spec.len() as u32).to_le_bytes());
    out.extend_from_slice(&spec);
    let named = model.named_params();
    out.extend_from_slice(&(named.len() as u32).to_le_bytes());
    for (name, t) in named {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<(Model<f32>, CheckpointMeta)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let spec_len = r.u32()? as usize;
    let header: Header =
        serde_json::from_slice(r.take(spec_len)?).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
    let mut model = Model::<f32>::build(&header.spec)?;
    if let Some(norm) = &header.meta.norm {
        if norm.mean.len() != header.spec.input_channels || norm.std.len() != header.spec.input_channels {
            return Err(Error::Checkpoint(
                "normalization stats do not match the input channels".into(),
            ));
        }
    }
    let expected: Vec<(String, Vec<usize>)> = model
        .named_params()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();

    let count = r.u32()? as usize;
    if count != expected.len() {
        return Err(Error::Checkpoint(format!(
            "{count} arrays stored, architecture has {}",
            expected.len()
        )));
    }
    let mut arrays = Vec::with_capacity(count);
    for (want_name, want_shape) in &expected {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        if name != want_name || &shape != want_shape {
            return Err(Error::Checkpoint(format!(
                "array `{name}` {shape:?} where `{want_name}` {want_shape:?} was expected"
            )));
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        arrays.push(Tensor::new(shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    for (dst, src) in model.params_mut().into_iter().zip(arrays) {
        *dst = src;
    }
    Ok((model, header.meta))
}

pub fn save(model: &Model<f32>, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    write_atomic(path, &to_bytes(model, meta)?)
}

pub fn load(path: &Path) -> Result<(Model<f32>, CheckpointMeta)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
