//! Encoder checkpoint container.
//!
//! ```text
//! magic        8 bytes  "QFMCKPT\0"
//! version      u32      1
//! config       u32 length + UTF-8 JSON of ModelConfig
//! count        u32      number of tensors
//! per tensor:
//!   name       u16 length + UTF-8
//!   ndim       u8
//!   dims       ndim x u64
//!   data       prod(dims) x f32
//! ```
//!
//! All integers and floats are little-endian. Weights are stored as f32, so a
//! freshly initialized encoder loses precision on its first save; any encoder
//! that was loaded from a checkpoint saves back to identical bytes.

use std::path::Path;

use super::{Encoder, ModelConfig};
use crate::autodiff::Tensor;
use crate::binio::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"QFMCKPT\0";
const VERSION: u32 = 1;

pub fn encode_checkpoint(enc: &Encoder) -> Result<Vec<u8>> {
    let mut w = Writer::new();
    w.bytes(MAGIC);
    w.u32(VERSION);
    let cfg = serde_json::to_string(enc.config())
        .map_err(|e| Error::Validation(format!("serializing model config: {e}")))?;
    w.long_string(&cfg)?;
    w.u32(enc.tensors().len() as u32);
    for (name, t) in enc.names().iter().zip(enc.tensors()) {
        w.string(name)?;
        w.u8(t.shape().len() as u8);
        for &d in t.shape() {
            w.u64(d as u64);
        }
        let data: Vec<f32> = t.data().iter().map(|&x| x as f32).collect();
        w.f32_slice(&data);
    }
    Ok(w.into_inner())
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Encoder> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC, VERSION)?;
    let at = r.offset();
    let cfg_json = r.long_string("config")?;
    let config: ModelConfig = serde_json::from_str(&cfg_json)
        .map_err(|e| Error::format(at, format!("config JSON: {e}")))?;
    let count = r.u32("tensor count")? as usize;
    let mut named = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name = r.string("tensor name")?;
        let ndim = r.u8("tensor rank")? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let at = r.offset();
            let d = r.u64("tensor dim")?;
            shape.push(usize::try_from(d).map_err(|_| Error::format(at, "tensor dim overflows"))?);
        }
        let at = r.offset();
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::format(at, format!("tensor {name} size overflows")))?;
        let data = r.f32_vec(n, &format!("tensor {name}"))?;
        let t = Tensor::new(shape, data.into_iter().map(f64::from).collect())?;
        named.push((name, t));
    }
    r.finish()?;
    Encoder::from_parts(config, named)
}

pub fn write_checkpoint(path: &Path, enc: &Encoder) -> Result<()> {
    write_file(path, &encode_checkpoint(enc)?)
}

pub fn read_checkpoint(path: &Path) -> Result<Encoder> {
    decode_checkpoint(&read_file(path)?)
}
