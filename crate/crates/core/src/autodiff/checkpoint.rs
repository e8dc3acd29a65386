//! Flat binary container of named tensors with a JSON header.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "PSCKPT01"
//! header_len u64
//! header     header_len bytes of UTF-8 JSON
//! count      u32
//! count x {  name_len u32, name bytes, ndim u32, dims ndim x u64,
//!            data product(dims) x f64 }
//! ```

use std::io::{self, Read, Write};

use super::{ParamStore, Tensor};

pub const MAGIC: &[u8; 8] = b"PSCKPT01";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("header json: {0}")]
    Json(#[from] serde_json::Error),
}

pub fn write_checkpoint<W: Write>(
    mut w: W,
    header: &serde_json::Value,
    params: &ParamStore,
) -> Result<(), CheckpointError> {
    let header = serde_json::to_vec(header)?;
    w.write_all(MAGIC)?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, t) in params.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

// Guards against absurd allocations from corrupt length fields.
const MAX_SECTION: u64 = 1 << 32;

pub fn read_checkpoint<R: Read>(
    mut r: R,
) -> Result<(serde_json::Value, ParamStore), CheckpointError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let header_len = read_u64(&mut r)?;
    if header_len > MAX_SECTION {
        return Err(CheckpointError::Malformed(format!(
            "header length {header_len}"
        )));
    }
    let mut header = vec![0u8; header_len as usize];
    r.read_exact(&mut header)?;
    let header: serde_json::Value = serde_json::from_slice(&header)?;
    let count = read_u32(&mut r)?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let name_len = read_u32(&mut r)?;
        let mut name = vec![0u8; name_len as usize];
        r.read_exact(&mut name)?;
        let name =
            String::from_utf8(name).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        let ndim = read_u32(&mut r)?;
        let mut shape = Vec::with_capacity(ndim as usize);
        for _ in 0..ndim {
            shape.push(read_u64(&mut r)?);
        }
        let n = shape
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n <= MAX_SECTION);
        let Some(n) = n else {
            return Err(CheckpointError::Malformed(format!(
                "tensor {name} has shape {shape:?}"
            )));
        };
        let mut data = Vec::with_capacity(n as usize);
        let mut buf = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        if params.get(&name).is_some() {
            return Err(CheckpointError::Malformed(format!(
                "duplicate tensor {name}"
            )));
        }
        let tensor = Tensor::new(shape.into_iter().map(|d| d as usize).collect(), data)
            .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        params.insert(name, tensor);
    }
    Ok((header, params))
}
