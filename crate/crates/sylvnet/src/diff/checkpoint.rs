//! Flat named-matrix archive for parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"NMAT"
//! version u32 (currently 1)
//! count   u32
//! entry*: name_len u32, name bytes (UTF-8),
//!         rows u64, cols u64, rows*cols f64 row-major
//! ```

use super::tape::DiffError;
use crate::Mat;
use ndarray::Array2;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"NMAT";
const VERSION: u32 = 1;

/// Writes named matrices in archive order.
pub fn save_archive(path: &Path, entries: &[(String, &Mat)]) -> Result<(), DiffError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (name, mat) in entries {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u32).to_le_bytes())?;
        w.write_all(bytes)?;
        w.write_all(&(mat.nrows() as u64).to_le_bytes())?;
        w.write_all(&(mat.ncols() as u64).to_le_bytes())?;
        for &v in mat.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads an archive back as (name, matrix) pairs in file order.
pub fn load_archive(path: &Path) -> Result<Vec<(String, Mat)>, DiffError> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(DiffError::Checkpoint(format!(
            "bad magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(DiffError::Checkpoint(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let count = read_u32(&mut r)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|e| DiffError::Checkpoint(format!("invalid name: {e}")))?;
        let rows = read_u64(&mut r)? as usize;
        let cols = read_u64(&mut r)? as usize;
        let mut data = vec![0.0f64; rows * cols];
        let mut buf = [0u8; 8];
        for v in data.iter_mut() {
            r.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
        let mat = Array2::from_shape_vec((rows, cols), data)
            .map_err(|e| DiffError::Checkpoint(format!("bad shape: {e}")))?;
        out.push((name, mat));
    }
    Ok(out)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, DiffError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, DiffError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}
