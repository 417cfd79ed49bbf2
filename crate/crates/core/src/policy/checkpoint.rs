//! Single-file checkpoint archive.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "WPTCKPT\0"
//! version      u32
//! d_h          u32
//! n_heads      u32
//! n_layers     u32
//! d_ff         u32
//! clip         f32
//! n_entries    u32
//! entry*       u16 name_len | name (utf-8) | u8 ndim | u32 dim* | f32 data (row-major)
//! ```
//!
//! Entry names and shapes follow [`super::tensor_layout`]. Loading rejects
//! unknown names, missing entries and any shape mismatch.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use super::{init_params, tensor_layout, ModelMeta, ModelParams, Scalar};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"WPTCKPT\0";

/// Version tag written into checkpoint files.
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Writes `params` to `path`. Values are stored as 32-bit floats, so saving
/// an `f32` model round-trips bit-exactly.
pub fn save_checkpoint<S: Scalar>(params: &ModelParams<S>, path: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(params.meta.d_h as u32).to_le_bytes());
    buf.extend_from_slice(&(params.meta.n_heads as u32).to_le_bytes());
    buf.extend_from_slice(&(params.meta.n_layers as u32).to_le_bytes());
    buf.extend_from_slice(&(params.meta.d_ff as u32).to_le_bytes());
    buf.extend_from_slice(&(params.meta.clip as f32).to_le_bytes());

    let layout = tensor_layout(&params.meta);
    let tensors = params.tensors();
    buf.extend_from_slice(&(layout.len() as u32).to_le_bytes());
    for ((name, shape), tensor) in layout.iter().zip(&tensors) {
        debug_assert_eq!(shape.as_slice(), tensor.shape());
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(shape.len() as u8);
        for &d in shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &x in tensor.iter() {
            buf.extend_from_slice(&(x.as_f64() as f32).to_le_bytes());
        }
    }

    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

/// Reads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<ModelParams<f32>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };

    if cur.take(8)? != MAGIC {
        return Err(Error::Format("not a checkpoint file (bad magic)".into()));
    }
    let version = cur.u32()?;
    if version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let meta = ModelMeta {
        d_h: cur.u32()? as usize,
        n_heads: cur.u32()? as usize,
        n_layers: cur.u32()? as usize,
        d_ff: cur.u32()? as usize,
        clip: cur.f32()? as f64,
    };
    meta.validate()?;

    let n_entries = cur.u32()? as usize;
    let mut entries: HashMap<String, (Vec<usize>, Vec<f32>)> = HashMap::new();
    for _ in 0..n_entries {
        let name_len = cur.u16()? as usize;
        let name = String::from_utf8(cur.take(name_len)?.to_vec())
            .map_err(|_| Error::Format("non-utf8 tensor name".into()))?;
        let ndim = cur.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(cur.u32()? as usize);
        }
        let count: usize = shape.iter().product();
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            data.push(cur.f32()?);
        }
        if entries.insert(name.clone(), (shape, data)).is_some() {
            return Err(Error::Format(format!("duplicate tensor {name}")));
        }
    }
    if cur.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after checkpoint payload".into()));
    }

    let layout = tensor_layout(&meta);
    if layout.len() != entries.len() {
        return Err(Error::Format(format!(
            "checkpoint has {} tensors, model needs {}",
            entries.len(),
            layout.len()
        )));
    }
    let mut flat: Vec<f32> = Vec::new();
    for (name, shape) in &layout {
        let (got_shape, data) = entries
            .get(name)
            .ok_or_else(|| Error::Format(format!("missing tensor {name}")))?;
        if got_shape != shape {
            return Err(Error::Format(format!(
                "tensor {name}: shape {got_shape:?} does not match expected {shape:?}"
            )));
        }
        flat.extend_from_slice(data);
    }

    let mut params: ModelParams<f32> = init_params(0, &meta)?;
    params.load_flat(&flat)?;
    Ok(params)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format("truncated checkpoint".into()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
