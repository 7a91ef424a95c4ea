//! Header-plus-blobs container used by checkpoint (`BLPC`) and index
//! (`BLIX`) files:
//!
//! ```text
//! magic[4] | version u32 LE | header_len u64 LE | header (UTF-8 TOML) | BMAT blob*
//! ```

use crate::error::{Error, Result};
use crate::io::bmat;
use crate::math::DenseMatrix;

pub const CONTAINER_VERSION: u32 = 1;

pub fn encode(magic: &[u8; 4], header: &str, blobs: &[&DenseMatrix]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(magic);
    out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for b in blobs {
        out.extend_from_slice(&bmat::encode(b));
    }
    out
}

/// Splits a container into its header text and every trailing blob.
pub fn decode(what: &'static str, magic: &[u8; 4], bytes: &[u8]) -> Result<(String, Vec<DenseMatrix>)> {
    if bytes.len() < 16 || &bytes[0..4] != magic {
        return Err(Error::format(what, "missing magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != CONTAINER_VERSION {
        return Err(Error::format(what, format!("unsupported version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let end = usize::try_from(hlen)
        .ok()
        .and_then(|h| h.checked_add(16))
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::format(what, "header length exceeds file"))?;
    let header = std::str::from_utf8(&bytes[16..end])
        .map_err(|e| Error::format(what, format!("header is not UTF-8: {e}")))?
        .to_owned();
    let mut rest = &bytes[end..];
    let mut blobs = Vec::new();
    while !rest.is_empty() {
        blobs.push(bmat::read_from(&mut rest)?);
    }
    Ok((header, blobs))
}
