//! Binary checkpoint format.
//!
//! Layout: magic `LBEBM1`, then `u32` entry count, then per entry the
//! name (`u32` length + UTF-8 bytes), `u32` rank, `u32` dims, and the
//! row-major values as little-endian IEEE `f32`. Files round-trip
//! bit-exactly.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::numerics::params::ParamStore;

const MAGIC: &[u8; 6] = b"LBEBM1";

pub fn to_bytes(params: &ParamStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for e in params.iter() {
        let name = e.name.as_bytes();
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name);
        out.extend_from_slice(&2u32.to_le_bytes());
        out.extend_from_slice(&(e.values.rows as u32).to_le_bytes());
        out.extend_from_slice(&(e.values.cols as u32).to_le_bytes());
        for &v in &e.values.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<ParamStore> {
    let bad = |msg: &str| Error::Data(format!("checkpoint: {msg}"));
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(bad("truncated"));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    let take_u32 = |pos: &mut usize| -> Result<u32> {
        let s = take(pos, 4)?;
        Ok(u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
    };

    if take(&mut pos, 6)? != MAGIC {
        return Err(bad("bad magic"));
    }
    let count = take_u32(&mut pos)? as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = take_u32(&mut pos)? as usize;
        let name = std::str::from_utf8(take(&mut pos, name_len)?)
            .map_err(|_| bad("name is not UTF-8"))?
            .to_string();
        let rank = take_u32(&mut pos)?;
        if rank != 2 {
            return Err(bad(&format!("unsupported rank {rank} for {name:?}")));
        }
        let rows = take_u32(&mut pos)? as usize;
        let cols = take_u32(&mut pos)? as usize;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            let s = take(&mut pos, 4)?;
            data.push(f32::from_le_bytes([s[0], s[1], s[2], s[3]]) as f64);
        }
        store.add(&name, Matrix::from_vec(rows, cols, data))?;
    }
    if pos != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(store)
}

pub fn save(params: &ParamStore, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(params)).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load(path: &Path) -> Result<ParamStore> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    from_bytes(&bytes)
}
