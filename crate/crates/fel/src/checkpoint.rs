//! Binary checkpoint: magic, format version, the model config as JSON, then
//! one record per parameter (group tag, name, shape, row-major `f64` values).
//! All integers and floats are little-endian.

use fel_core::model::{Group, Model, ModelConfig};
use fel_core::tensor::Tensor;
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"FELCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0} (expected {VERSION})")]
    Version(u32),
    #[error("checkpoint truncated at byte {0}")]
    Truncated(usize),
    #[error("{0} unexpected bytes after the last record")]
    TrailingBytes(usize),
    #[error("bad config block: {0}")]
    Config(String),
    #[error("parameter {name}: {reason}")]
    Record { name: String, reason: String },
    #[error(transparent)]
    Model(#[from] fel_core::model::ModelError),
}

pub fn save_checkpoint(model: &Model) -> Vec<u8> {
    let config = serde_json::to_vec(model.config()).expect("model config serializes");
    let mut out = Vec::with_capacity(64 + config.len() + 8 * model.param_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u64).to_le_bytes());
    out.extend_from_slice(&config);
    out.extend_from_slice(&(model.params().len() as u64).to_le_bytes());
    for (t, info) in model.params().iter().zip(model.info()) {
        out.push(info.group.tag());
        out.extend_from_slice(&(info.name.len() as u64).to_le_bytes());
        out.extend_from_slice(info.name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u64).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or(CheckpointError::Truncated(self.buf.len()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize, CheckpointError> {
        let n = self.u64()?;
        // every length counts bytes or elements still to come, so it cannot exceed the buffer
        if n > self.buf.len() as u64 {
            return Err(CheckpointError::Truncated(self.buf.len()));
        }
        Ok(n as usize)
    }
}

/// Config stored in a checkpoint, without decoding the parameters.
pub fn checkpoint_config(bytes: &[u8]) -> Result<ModelConfig, CheckpointError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    read_header(&mut r)
}

fn read_header(r: &mut Reader) -> Result<ModelConfig, CheckpointError> {
    if r.take(MAGIC.len()).map_err(|_| CheckpointError::BadMagic)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let n = r.len()?;
    serde_json::from_slice(r.take(n)?).map_err(|e| CheckpointError::Config(e.to_string()))
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<Model, CheckpointError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let cfg = read_header(&mut r)?;
    let count = r.len()?;
    let mut parts = Vec::with_capacity(count);
    let mut groups = Vec::with_capacity(count);
    for _ in 0..count {
        let tag = r.take(1)?[0];
        let n = r.len()?;
        let name = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| CheckpointError::Record {
            name: String::from("?"),
            reason: String::from("name is not UTF-8"),
        })?;
        let group = Group::from_tag(tag).ok_or_else(|| CheckpointError::Record {
            name: name.clone(),
            reason: format!("unknown group tag {tag}"),
        })?;
        let ndim = r.len()?;
        let shape = (0..ndim).map(|_| r.len()).collect::<Result<Vec<_>, _>>()?;
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let numel = numel
            .filter(|&n| n.checked_mul(8).is_some_and(|b| b <= bytes.len()))
            .ok_or(CheckpointError::Truncated(bytes.len()))?;
        let data = r
            .take(numel * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(&shape, data).map_err(|e| CheckpointError::Record {
            name: name.clone(),
            reason: e.to_string(),
        })?;
        groups.push((name.clone(), group));
        parts.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::TrailingBytes(bytes.len() - r.pos));
    }
    let model = Model::from_parts(cfg, parts)?;
    for (info, (name, group)) in model.info().iter().zip(&groups) {
        if info.group != *group {
            return Err(CheckpointError::Record {
                name: name.clone(),
                reason: format!("stored in group {group:?}, expected {:?}", info.group),
            });
        }
    }
    Ok(model)
}
