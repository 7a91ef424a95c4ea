//! BMAT binary matrix format.
//!
//! ```text
//! offset  size          field
//! 0       4             magic "BMAT"
//! 4       4             version, u32 LE (= 1)
//! 8       8             rows, u64 LE
//! 16      8             cols, u64 LE
//! 24      4·rows·cols   values, f32 LE, row-major
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::math::DenseMatrix;

pub const BMAT_MAGIC: &[u8; 4] = b"BMAT";
pub const BMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 24;

pub fn encode(m: &DenseMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * m.data().len());
    out.extend_from_slice(BMAT_MAGIC);
    out.extend_from_slice(&BMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for v in m.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_to(w: &mut impl Write, m: &DenseMatrix) -> std::io::Result<()> {
    w.write_all(&encode(m))
}

/// Reads one BMAT blob from the stream.
pub fn read_from(r: &mut impl Read) -> Result<DenseMatrix> {
    let mut head = [0u8; HEADER_LEN];
    r.read_exact(&mut head)
        .map_err(|e| Error::format("BMAT", format!("truncated header: {e}")))?;
    if &head[0..4] != BMAT_MAGIC {
        return Err(Error::format("BMAT", format!("bad magic {:?}", &head[0..4])));
    }
    let version = u32::from_le_bytes(head[4..8].try_into().expect("4 bytes"));
    if version != BMAT_VERSION {
        return Err(Error::format("BMAT", format!("unsupported version {version}")));
    }
    let rows = u64::from_le_bytes(head[8..16].try_into().expect("8 bytes"));
    let cols = u64::from_le_bytes(head[16..24].try_into().expect("8 bytes"));
    let len = rows
        .checked_mul(cols)
        .and_then(|n| usize::try_from(n).ok())
        .filter(|n| n.checked_mul(4).is_some())
        .ok_or_else(|| Error::format("BMAT", format!("implausible shape {rows}x{cols}")))?;
    let mut buf = Vec::new();
    r.take(4 * len as u64)
        .read_to_end(&mut buf)
        .map_err(|e| Error::format("BMAT", e.to_string()))?;
    if buf.len() != 4 * len {
        return Err(Error::format(
            "BMAT",
            format!("expected {} payload bytes, found {}", 4 * len, buf.len()),
        ));
    }
    let data = buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    DenseMatrix::new(rows as usize, cols as usize, data)
}

/// Decodes a complete BMAT file image, rejecting trailing bytes.
pub fn decode(bytes: &[u8]) -> Result<DenseMatrix> {
    let mut cursor = bytes;
    let m = read_from(&mut cursor)?;
    if !cursor.is_empty() {
        return Err(Error::format("BMAT", format!("{} trailing bytes", cursor.len())));
    }
    Ok(m)
}

/// Checks that `bytes` form a well-formed BMAT file with finite values.
pub fn validate(bytes: &[u8]) -> Result<(usize, usize)> {
    let m = decode(bytes)?;
    if !m.is_finite() {
        return Err(Error::format("BMAT", "contains non-finite values"));
    }
    Ok(m.shape())
}

pub fn save(path: &Path, m: &DenseMatrix) -> Result<()> {
    super::write_atomic(path, &encode(m))
}

pub fn load(path: &Path) -> Result<DenseMatrix> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
