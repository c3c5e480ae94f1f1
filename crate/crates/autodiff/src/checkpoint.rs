//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "PFCKPT01"
//! meta_len     u32
//! meta         meta_len bytes of UTF-8 (free-form stamp, e.g. JSON hyperparameters)
//! n_tensors    u32
//! per tensor:
//!   name_len   u32
//!   name       name_len bytes of UTF-8
//!   rank       u32
//!   dims       rank × u64
//!   values     product(dims) × f64
//! ```

use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::params::ParamSet;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"PFCKPT01";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

/// Named parameter tensors with a metadata stamp.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: String,
    pub params: ParamSet,
}

fn put_u32(w: &mut impl Write, v: usize) -> Result<(), CheckpointError> {
    let v = u32::try_from(v).map_err(|_| CheckpointError::Corrupt(format!("{v} exceeds u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32(r: &mut impl Read) -> Result<usize, CheckpointError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn get_string(r: &mut impl Read) -> Result<String, CheckpointError> {
    let len = get_u32(r)?;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| CheckpointError::Corrupt(e.to_string()))
}

impl Checkpoint {
    pub fn new(meta: impl Into<String>, params: ParamSet) -> Self {
        Self {
            meta: meta.into(),
            params,
        }
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<(), CheckpointError> {
        w.write_all(MAGIC)?;
        put_u32(w, self.meta.len())?;
        w.write_all(self.meta.as_bytes())?;
        put_u32(w, self.params.len())?;
        for (name, t) in self.params.iter() {
            put_u32(w, name.len())?;
            w.write_all(name.as_bytes())?;
            put_u32(w, t.rank())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &x in t.data() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, CheckpointError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let meta = get_string(r)?;
        let count = get_u32(r)?;
        let mut params = ParamSet::new();
        for _ in 0..count {
            let name = get_string(r)?;
            let rank = get_u32(r)?;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let n: usize = shape.iter().product();
            let mut raw = vec![0u8; n * 8];
            r.read_exact(&mut raw)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
            params.push(name, t);
        }
        Ok(Self { meta, params })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        let bytes = std::fs::read(path)?;
        Self::read_from(&mut bytes.as_slice())
    }
}
