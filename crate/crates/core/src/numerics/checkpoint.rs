//! Flat parameter archive.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "HRTCKPT1"
//! u32 header_len, header bytes (UTF-8 JSON)
//! u32 n_params
//! per parameter:
//!   u32 name_len, name bytes
//!   u32 rank, u64 × rank dims
//!   f64 × prod(dims) values
//! ```

use std::collections::HashMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor};

pub const MAGIC: &[u8; 8] = b"HRTCKPT1";

pub fn write_archive<W: Write>(mut w: W, header: &str, params: &ParamStore) -> Result<()> {
    w.write_all(MAGIC)?;
    write_bytes(&mut w, header.as_bytes())?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for p in params.iter() {
        write_bytes(&mut w, p.name.as_bytes())?;
        let shape = p.value.shape();
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(p.value.len() * 8);
        for v in p.value.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an archive into its header string and a name → tensor map.
pub fn read_archive<R: Read>(mut r: R) -> Result<(String, HashMap<String, Tensor>)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("truncated magic".into()))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {:?}",
            String::from_utf8_lossy(&magic)
        )));
    }
    let header = String::from_utf8(read_bytes(&mut r)?)
        .map_err(|_| Error::Checkpoint("header is not UTF-8".into()))?;
    let n = read_u32(&mut r)? as usize;
    let mut out = HashMap::with_capacity(n);
    for _ in 0..n {
        let name = String::from_utf8(read_bytes(&mut r)?)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut b = [0u8; 8];
            r.read_exact(&mut b).map_err(truncated)?;
            shape.push(u64::from_le_bytes(b) as usize);
        }
        let len: usize = shape.iter().product();
        let mut raw = vec![0u8; len * 8];
        r.read_exact(&mut raw).map_err(truncated)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(shape, data)?;
        if out.insert(name.clone(), t).is_some() {
            return Err(Error::Checkpoint(format!("duplicate parameter {name}")));
        }
    }
    Ok((header, out))
}

fn truncated(_: std::io::Error) -> Error {
    Error::Checkpoint("truncated archive".into())
}

fn write_bytes<W: Write>(w: &mut W, b: &[u8]) -> Result<()> {
    w.write_all(&(b.len() as u32).to_le_bytes())?;
    w.write_all(b)?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn read_bytes<R: Read>(r: &mut R) -> Result<Vec<u8>> {
    let n = read_u32(r)? as usize;
    let mut b = vec![0u8; n];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(b)
}
