//! Binary checkpoint container: versioned header, the full model config plus
//! arbitrary task metadata as JSON, then every named parameter tensor with
//! raw f64 bits so a save/load round trip is bit-identical.

use super::{ModelConfig, ModelError, ParamSet};
use serde::{Deserialize, Serialize};
use std::io::Read;
use std::path::Path;

const MAGIC: &[u8; 4] = b"GLMO";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    meta: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: ModelConfig,
    /// Task-level metadata (objective config, intervals, run seed). Opaque to
    /// this module; round-trips verbatim.
    pub meta: serde_json::Value,
    pub params: ParamSet,
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), ModelError> {
    let header = Header {
        model: ckpt.model.clone(),
        meta: ckpt.meta.clone(),
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| ModelError::Checkpoint(format!("header encode: {e}")))?;

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_json);
    out.extend_from_slice(&(ckpt.params.len() as u64).to_le_bytes());
    for p in ckpt.params.iter() {
        out.extend_from_slice(&(p.name.len() as u64).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.push(p.trainable as u8);
        out.extend_from_slice(&(p.shape.len() as u64).to_le_bytes());
        for &dim in &p.shape {
            out.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        for &v in &p.data {
            out.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if self.buf.len() < n {
            return Err(ModelError::Checkpoint("truncated checkpoint".into()));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, ModelError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut cur = Cursor { buf: &bytes };

    if cur.take(4)? != MAGIC {
        return Err(ModelError::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(cur.take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(ModelError::Checkpoint(format!(
            "unsupported version {version}"
        )));
    }
    let header_len = cur.u64()? as usize;
    let header: Header = serde_json::from_slice(cur.take(header_len)?)
        .map_err(|e| ModelError::Checkpoint(format!("header decode: {e}")))?;

    let n_params = cur.u64()? as usize;
    let mut params = ParamSet::new();
    for _ in 0..n_params {
        let name_len = cur.u64()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| ModelError::Checkpoint("non-utf8 parameter name".into()))?
            .to_string();
        let trainable = cur.take(1)?[0] != 0;
        let ndim = cur.u64()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(cur.u64()? as usize);
        }
        let count: usize = shape.iter().product();
        let raw = cur.take(count * 8)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().unwrap())))
            .collect();
        params.add(&name, data, shape, trainable);
    }
    if !cur.buf.is_empty() {
        return Err(ModelError::Checkpoint("trailing bytes".into()));
    }

    header.model.validate()?;
    Ok(Checkpoint {
        model: header.model,
        meta: header.meta,
        params,
    })
}
