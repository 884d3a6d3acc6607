//! Little-endian primitives shared by the embedding and checkpoint formats.

use std::io::{Read, Write};

use crate::error::{Error, Result};

fn wrap(e: std::io::Error) -> Error {
    Error::io("<stream>", e)
}

pub fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes()).map_err(wrap)
}

pub fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes()).map_err(wrap)
}

pub fn write_str(w: &mut impl Write, s: &str) -> Result<()> {
    write_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes()).map_err(wrap)
}

pub fn write_f64s(w: &mut impl Write, xs: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(xs.len() * 8);
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf).map_err(wrap)
}

pub fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(wrap)?;
    Ok(b)
}

pub fn read_u32(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(read_exact::<4>(r)?))
}

pub fn read_u64(r: &mut impl Read) -> Result<u64> {
    Ok(u64::from_le_bytes(read_exact::<8>(r)?))
}

pub fn read_str(r: &mut impl Read) -> Result<String> {
    let n = read_u32(r)? as usize;
    let mut b = vec![0u8; n];
    r.read_exact(&mut b).map_err(wrap)?;
    String::from_utf8(b).map_err(|e| Error::Compat(format!("invalid utf-8 string: {e}")))
}

pub fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut b = vec![0u8; n * 8];
    r.read_exact(&mut b).map_err(wrap)?;
    Ok(b.chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}
