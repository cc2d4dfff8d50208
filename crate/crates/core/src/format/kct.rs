//! `KCT1` tensor files: the magic `KCT1`, then `p, q, r, n` as little-endian
//! `u32`, then `p*q*r*n` little-endian `f64` values in tensor order.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Dims, TrialTensor};

pub const MAGIC: &[u8; 4] = b"KCT1";
const HEADER_LEN: usize = 20;

pub fn encode(t: &TrialTensor) -> Result<Vec<u8>> {
    let d = t.dims();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * t.values().len());
    out.extend_from_slice(MAGIC);
    for (name, v) in [("p", d.p), ("q", d.q), ("r", d.r), ("n", d.n)] {
        let v = u32::try_from(v).map_err(|_| Error::parse("KCT1", name, "dimension exceeds u32"))?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in t.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<TrialTensor> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::parse("KCT1", "magic", "expected the bytes `KCT1`"));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::parse("KCT1", "header", format!("truncated header ({} bytes)", bytes.len())));
    }
    let mut dims = [0usize; 4];
    for (slot, (name, chunk)) in dims
        .iter_mut()
        .zip(["p", "q", "r", "n"].into_iter().zip(bytes[4..HEADER_LEN].chunks_exact(4)))
    {
        let v = u32::from_le_bytes(chunk.try_into().expect("chunk of four bytes"));
        if v == 0 {
            return Err(Error::parse("KCT1", name, "dimension must be positive"));
        }
        *slot = v as usize;
    }
    let dims = Dims::new(dims[0], dims[1], dims[2], dims[3]);
    let count = dims
        .total_len()
        .filter(|c| c.checked_mul(8).is_some())
        .ok_or_else(|| Error::parse("KCT1", "n", "p*q*r*n overflows"))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != count * 8 {
        return Err(Error::parse(
            "KCT1",
            "payload",
            format!("expected {} bytes for {count} values, found {}", count * 8, payload.len()),
        ));
    }
    let mut values = Vec::with_capacity(count);
    for (i, chunk) in payload.chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().expect("chunk of eight bytes"));
        if !v.is_finite() {
            return Err(Error::parse("KCT1", "payload", format!("non-finite value at element {i}")));
        }
        values.push(v);
    }
    TrialTensor::new(dims, values)
}

pub fn read(path: &Path) -> Result<TrialTensor> {
    decode(&std::fs::read(path)?)
}

pub fn write(path: &Path, t: &TrialTensor) -> Result<()> {
    std::fs::write(path, encode(t)?)?;
    Ok(())
}
