//! Binary checkpoint container.
//!
//! All integers are little-endian.
//!
//! ```text
//! magic        8 bytes   "PESCCKPT"
//! version      u32       1
//! header_len   u64
//! header       JSON      {"config": ModelConfig, "vocab": [token, ...]}
//! n_tensors    u32
//! per tensor:
//!   name_len   u32
//!   name       UTF-8
//!   rows       u32
//!   cols       u32
//!   data       rows*cols f64, row-major
//! ```

use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

use super::{Matrix, Model, ModelConfig, ParamStore};
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PESCCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab: Vocabulary,
}

pub fn write_checkpoint<W: Write>(model: &Model, mut w: W) -> Result<()> {
    let header = serde_json::to_vec(&Header {
        config: model.config.clone(),
        vocab: model.vocab.clone(),
    })?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    w.write_all(&(model.params.len() as u32).to_le_bytes())?;
    for (name, t) in model.params.names().iter().zip(model.params.tensors()) {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rows() as u32).to_le_bytes())?;
        w.write_all(&(t.cols() as u32).to_le_bytes())?;
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Model> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let header_len = read_u64(&mut r)? as usize;
    let mut header = vec![0u8; header_len];
    r.read_exact(&mut header)?;
    let header: Header = serde_json::from_slice(&header)?;
    let n = read_u32(&mut r)? as usize;
    let mut store = ParamStore::default();
    for _ in 0..n {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let rows = read_u32(&mut r)? as usize;
        let cols = read_u32(&mut r)? as usize;
        let mut data = Vec::with_capacity(rows * cols);
        let mut b = [0u8; 8];
        for _ in 0..rows * cols {
            r.read_exact(&mut b)?;
            data.push(f64::from_le_bytes(b));
        }
        store.push(name, Matrix::from_vec(rows, cols, data));
    }
    Model::from_parts(header.config, header.vocab, store)
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(model, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    let bytes = std::fs::read(path)?;
    read_checkpoint(bytes.as_slice())
}
