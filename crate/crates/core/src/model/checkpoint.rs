//! Binary checkpoint format, all integers and reals little-endian:
//!
//! ```text
//! magic        4 bytes  "HSNC"
//! version      u32      = 1
//! config_len   u32      byte length of the config text
//! config       utf-8    ModelConfig as "key = value" lines
//! iteration    u64
//! count        u32      number of tensors
//! count x {
//!   name_len   u32
//!   name       utf-8
//!   dims       4 x u32  (n, c, h, w)
//!   data       n*c*h*w x f32
//! }
//! has_adam     u8       0 or 1
//! if has_adam {
//!   step       u64
//!   count x { m: f32 data, v: f32 data }   same order and shapes as tensors
//! }
//! ```

use std::fs;
use std::path::Path;

use super::{check_params, ModelConfig};
use crate::error::{io_err, CheckpointError, Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};
use crate::train::AdamState;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"HSNC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub config: ModelConfig,
    pub iteration: u64,
    pub params: ParamStore<T>,
    pub optimizer: Option<AdamState<T>>,
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f32s<T: Scalar>(buf: &mut Vec<u8>, t: &Tensor<T>) {
    buf.reserve(t.len() * 4);
    for &v in t.data() {
        buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
}

pub fn encode_checkpoint<T: Scalar>(ckpt: &Checkpoint<T>) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    put_u32(&mut buf, CHECKPOINT_VERSION);
    let text = ckpt.config.to_text();
    put_u32(&mut buf, text.len() as u32);
    buf.extend_from_slice(text.as_bytes());
    buf.extend_from_slice(&ckpt.iteration.to_le_bytes());
    put_u32(&mut buf, ckpt.params.len() as u32);
    for (name, t) in ckpt.params.iter() {
        put_u32(&mut buf, name.len() as u32);
        buf.extend_from_slice(name.as_bytes());
        for d in t.shape().dims() {
            put_u32(&mut buf, d as u32);
        }
        put_f32s(&mut buf, t);
    }
    match &ckpt.optimizer {
        None => buf.push(0),
        Some(adam) => {
            buf.push(1);
            buf.extend_from_slice(&adam.step.to_le_bytes());
            for (name, _) in ckpt.params.iter() {
                let zero = Tensor::zeros(Shape::scalar());
                put_f32s(&mut buf, adam.m.get(name).unwrap_or(&zero));
                put_f32s(&mut buf, adam.v.get(name).unwrap_or(&zero));
            }
        }
    }
    buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> std::result::Result<&'a [u8], CheckpointError> {
        if self.buf.len() - self.pos < n {
            return Err(CheckpointError::Truncated(what));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> std::result::Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &'static str) -> std::result::Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn f32s<T: Scalar>(&mut self, shape: Shape, what: &'static str) -> std::result::Result<Tensor<T>, CheckpointError> {
        let n = shape.numel();
        let bytes = self.take(n.checked_mul(4).ok_or(CheckpointError::Truncated(what))?, what)?;
        let data = bytes
            .chunks_exact(4)
            .map(|b| T::of(f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64))
            .collect();
        Tensor::from_vec(shape, data).map_err(|e| CheckpointError::Malformed(e.to_string()))
    }
}

pub fn decode_checkpoint<T: Scalar>(buf: &[u8]) -> std::result::Result<Checkpoint<T>, CheckpointError> {
    let mut r = Reader { buf, pos: 0 };
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("4 bytes");
    if magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let clen = r.u32("config length")? as usize;
    let text = std::str::from_utf8(r.take(clen, "config")?)
        .map_err(|e| CheckpointError::Config(format!("not utf-8: {e}")))?;
    let config = ModelConfig::from_text(text).map_err(|e| CheckpointError::Config(e.to_string()))?;
    let iteration = r.u64("iteration")?;
    let count = r.u32("tensor count")? as usize;

    let expected: ParamStore<f32> = {
        let mut s = ParamStore::new();
        for l in super::layer_table(&config) {
            s.insert(l.weight_name(), Tensor::zeros(l.weight_shape()));
            s.insert(l.bias_name(), Tensor::zeros(l.bias_shape()));
        }
        s
    };
    let mut params = ParamStore::new();
    for _ in 0..count {
        let nlen = r.u32("tensor name length")? as usize;
        let name = std::str::from_utf8(r.take(nlen, "tensor name")?)
            .map_err(|e| CheckpointError::Malformed(format!("tensor name not utf-8: {e}")))?
            .to_string();
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = r.u32("tensor dims")? as usize;
        }
        let shape = Shape::from(dims);
        let Some(want) = expected.get(&name) else {
            return Err(CheckpointError::UnknownTensor(name));
        };
        if want.shape() != shape {
            return Err(CheckpointError::ShapeMismatch {
                name,
                expected: want.shape().to_string(),
                found: shape.to_string(),
            });
        }
        let t = r.f32s(shape, "tensor data")?;
        params.insert(name, t);
    }
    let missing: Vec<String> = expected.names().filter(|n| !params.contains(n)).map(str::to_string).collect();
    if !missing.is_empty() {
        return Err(CheckpointError::MissingTensors(missing));
    }
    let optimizer = match r.take(1, "optimizer flag")?[0] {
        0 => None,
        1 => {
            let step = r.u64("adam step")?;
            let mut m = ParamStore::new();
            let mut v = ParamStore::new();
            for (name, t) in params.iter() {
                m.insert(name, r.f32s(t.shape(), "adam first moment")?);
                v.insert(name, r.f32s(t.shape(), "adam second moment")?);
            }
            Some(AdamState { m, v, step })
        }
        other => return Err(CheckpointError::Malformed(format!("optimizer flag {other}"))),
    };
    if r.pos != buf.len() {
        return Err(CheckpointError::TrailingBytes(buf.len() - r.pos));
    }
    Ok(Checkpoint { config, iteration, params, optimizer })
}

/// Writes via a temporary sibling file and a rename, so an interrupted save
/// never leaves a partial checkpoint under `path`.
pub fn save_checkpoint<T: Scalar>(path: impl AsRef<Path>, ckpt: &Checkpoint<T>) -> Result<()> {
    let path = path.as_ref();
    check_params(&ckpt.config, &ckpt.params)?;
    let tmp = path.with_extension("hsnc.partial");
    fs::write(&tmp, encode_checkpoint(ckpt)).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Checkpoint<T>> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(io_err(path))?;
    decode_checkpoint(&buf).map_err(|source| Error::Checkpoint { path: path.to_path_buf(), source })
}
