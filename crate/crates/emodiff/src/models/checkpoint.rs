//! Single-file checkpoint archives.
//!
//! Layout: magic, format version, JSON metadata header, then named f32
//! tensors (little-endian). The loader rejects unknown versions.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{EmodiffError, Result};

const MAGIC: &[u8; 8] = b"EMODIFF\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleMeta {
    pub t_max: usize,
    pub beta_start: f32,
    pub beta_end: f32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub arch_id: String,
    pub dataset_hash: String,
    pub seed: u64,
    pub schedule: ScheduleMeta,
    /// Model-specific config echo.
    pub config: serde_json::Value,
}

#[derive(Debug)]
pub struct TensorEntry {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

pub fn write_checkpoint(path: &Path, meta: &CheckpointMeta, tensors: &[TensorEntry]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(MAGIC)?;
    f.write_u32::<LittleEndian>(FORMAT_VERSION)?;
    let meta_json = serde_json::to_vec(meta)?;
    f.write_u32::<LittleEndian>(meta_json.len() as u32)?;
    f.write_all(&meta_json)?;
    f.write_u32::<LittleEndian>(tensors.len() as u32)?;
    for t in tensors {
        let name = t.name.as_bytes();
        f.write_u16::<LittleEndian>(name.len() as u16)?;
        f.write_all(name)?;
        f.write_u8(t.dims.len() as u8)?;
        for &d in &t.dims {
            f.write_u32::<LittleEndian>(d as u32)?;
        }
        let expect: usize = t.dims.iter().product();
        if expect != t.data.len() {
            return Err(EmodiffError::Checkpoint(format!(
                "tensor {} dims {:?} do not match {} values",
                t.name,
                t.dims,
                t.data.len()
            )));
        }
        for &v in &t.data {
            f.write_f32::<LittleEndian>(v)?;
        }
    }
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<(CheckpointMeta, HashMap<String, TensorEntry>)> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(EmodiffError::Checkpoint("bad magic".into()));
    }
    let version = f.read_u32::<LittleEndian>()?;
    if version != FORMAT_VERSION {
        return Err(EmodiffError::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let meta_len = f.read_u32::<LittleEndian>()? as usize;
    let mut meta_buf = vec![0u8; meta_len];
    f.read_exact(&mut meta_buf)?;
    let meta: CheckpointMeta = serde_json::from_slice(&meta_buf)?;
    let count = f.read_u32::<LittleEndian>()? as usize;
    let mut tensors = HashMap::with_capacity(count);
    for _ in 0..count {
        let name_len = f.read_u16::<LittleEndian>()? as usize;
        let mut name_buf = vec![0u8; name_len];
        f.read_exact(&mut name_buf)?;
        let name = String::from_utf8(name_buf)
            .map_err(|e| EmodiffError::Checkpoint(format!("bad tensor name: {e}")))?;
        let ndim = f.read_u8()? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(f.read_u32::<LittleEndian>()? as usize);
        }
        let n: usize = dims.iter().product();
        let mut data = vec![0f32; n];
        f.read_f32_into::<LittleEndian>(&mut data)?;
        tensors.insert(
            name.clone(),
            TensorEntry { name, dims, data },
        );
    }
    Ok((meta, tensors))
}

/// Pull a tensor out of the map, checking its dims.
pub fn take_tensor(
    tensors: &mut HashMap<String, TensorEntry>,
    name: &str,
    dims: &[usize],
) -> Result<Vec<f32>> {
    let t = tensors
        .remove(name)
        .ok_or_else(|| EmodiffError::Checkpoint(format!("missing tensor {name}")))?;
    if t.dims != dims {
        return Err(EmodiffError::Checkpoint(format!(
            "tensor {name} has dims {:?}, expected {:?}",
            t.dims, dims
        )));
    }
    Ok(t.data)
}
