//! Little-endian binary helpers shared by the model and matrix file formats.
//!
//! Every versioned file starts with an 8-byte magic tag followed by a `u32`
//! format version. Scalars are little-endian; vectors are a `u64` length
//! followed by the elements.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub(crate) fn write_header<W: Write>(w: &mut W, magic: &[u8; 8], version: u32) -> Result<()> {
    w.write_all(magic)?;
    write_u32(w, version)
}

pub(crate) fn read_header<R: Read>(r: &mut R, magic: &[u8; 8], version: u32) -> Result<()> {
    let mut tag = [0u8; 8];
    r.read_exact(&mut tag)?;
    if &tag != magic {
        return Err(Error::Format(format!(
            "bad magic: expected {:?}, found {:?}",
            String::from_utf8_lossy(magic),
            String::from_utf8_lossy(&tag)
        )));
    }
    let found = read_u32(r)?;
    if found != version {
        return Err(Error::Format(format!(
            "unsupported version {found} (expected {version})"
        )));
    }
    Ok(())
}

pub(crate) fn write_u8<W: Write>(w: &mut W, v: u8) -> Result<()> {
    w.write_all(&[v])?;
    Ok(())
}

pub(crate) fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

pub(crate) fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn write_usize<W: Write>(w: &mut W, v: usize) -> Result<()> {
    write_u64(w, v as u64)
}

pub(crate) fn read_usize<R: Read>(r: &mut R) -> Result<usize> {
    let v = read_u64(r)?;
    usize::try_from(v).map_err(|_| Error::Format(format!("length {v} overflows usize")))
}

pub(crate) fn write_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub(crate) fn write_f64s<W: Write>(w: &mut W, v: &[f64]) -> Result<()> {
    write_usize(w, v.len())?;
    for &x in v {
        write_f64(w, x)?;
    }
    Ok(())
}

/// Upper bound on any length prefix, so a corrupt file cannot trigger a huge allocation.
const MAX_LEN: usize = 1 << 32;

pub(crate) fn read_f64s<R: Read>(r: &mut R) -> Result<Vec<f64>> {
    let n = read_usize(r)?;
    if n > MAX_LEN {
        return Err(Error::Format(format!("vector length {n} too large")));
    }
    (0..n).map(|_| read_f64(r)).collect()
}
