//! Binary parameter checkpoints.
//!
//! Layout: the 8-byte magic `PLMCKPT1`, then per parameter: `u32` name length,
//! UTF-8 name bytes, `u32` rank, `rank` x `u32` dims, and the little-endian
//! `f32` payload. The file ends after the last parameter.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Result, TensorError};
use crate::param::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"PLMCKPT1";

pub fn write_to<W: Write>(store: &ParamStore, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    for (_, p) in store.iter() {
        let name = p.name().as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        let shape = p.value().shape();
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in p.value().data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save(store: &ParamStore, path: &Path) -> Result<()> {
    write_to(store, BufWriter::new(File::create(path)?))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| TensorError::Checkpoint("truncated record".into()))?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_from<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(TensorError::Checkpoint("bad magic".into()));
    }
    let mut cur = &bytes[8..];
    let mut out = Vec::new();
    while !cur.is_empty() {
        let name_len = read_u32(&mut cur)? as usize;
        if cur.len() < name_len {
            return Err(TensorError::Checkpoint("truncated name".into()));
        }
        let name = String::from_utf8(cur[..name_len].to_vec())
            .map_err(|_| TensorError::Checkpoint("name is not UTF-8".into()))?;
        cur = &cur[name_len..];
        let rank = read_u32(&mut cur)? as usize;
        let shape = (0..rank)
            .map(|_| read_u32(&mut cur).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        if cur.len() < len * 4 {
            return Err(TensorError::Checkpoint(format!("truncated payload for {name}")));
        }
        let data = cur[..len * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        cur = &cur[len * 4..];
        out.push((name, Tensor::from_vec(shape, data)?));
    }
    Ok(out)
}

pub fn load(path: &Path) -> Result<Vec<(String, Tensor)>> {
    read_from(BufReader::new(File::open(path)?))
}
