// SPDX-License-Identifier: MIT OR Apache-2.0

//! Binary snapshot format.
//!
//! Layout (all integers `u32` little-endian, all floats `f64` little-endian):
//!
//! | field      | size                         |
//! |------------|------------------------------|
//! | magic      | `b"TTCK"`                    |
//! | version    | 1 × u32                      |
//! | d          | 1 × u32                      |
//! | mode sizes | d × u32                      |
//! | ranks      | (d+1) × u32                  |
//! | cores      | Σ r_{k-1}·n_k·r_k × f64, each row-major (left rank, mode, right rank) |
//! | time       | 1 × f64                      |

use std::io::{Read, Write};
use std::path::Path;

use super::{Core, TensorTrain};
use crate::error::{Error, Result};

/// Magic bytes at the start of every checkpoint.
pub const MAGIC: &[u8; 4] = b"TTCK";
/// Current format version.
pub const VERSION: u32 = 1;

/// Serializes a tensor train and its time stamp.
pub fn encode(tt: &TensorTrain, t: f64) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tt.d() as u32).to_le_bytes());
    for n in tt.mode_sizes() {
        out.extend_from_slice(&(n as u32).to_le_bytes());
    }
    for r in tt.ranks() {
        out.extend_from_slice(&(r as u32).to_le_bytes());
    }
    for core in tt.cores() {
        for x in core.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out.extend_from_slice(&t.to_le_bytes());
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("checkpoint truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(f64::from_le_bytes(a))
    }
}

/// Parses a checkpoint produced by [`encode`].
pub fn decode(bytes: &[u8]) -> Result<(TensorTrain, f64)> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::Format("bad magic bytes".into()));
    }
    let version = c.u32()?;
    if version != VERSION as usize {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let d = c.u32()?;
    if d == 0 || d > 4096 {
        return Err(Error::Format(format!("implausible dimension {d}")));
    }
    let sizes = (0..d).map(|_| c.u32()).collect::<Result<Vec<_>>>()?;
    let ranks = (0..=d).map(|_| c.u32()).collect::<Result<Vec<_>>>()?;
    let mut cores = Vec::with_capacity(d);
    for k in 0..d {
        let len = ranks[k]
            .checked_mul(sizes[k])
            .and_then(|x| x.checked_mul(ranks[k + 1]))
            .filter(|&x| x <= bytes.len() / 8)
            .ok_or_else(|| Error::Format(format!("core {k} size overflow")))?;
        let data = (0..len).map(|_| c.f64()).collect::<Result<Vec<_>>>()?;
        cores.push(Core::from_vec(ranks[k], sizes[k], ranks[k + 1], data)?);
    }
    let t = c.f64()?;
    if c.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    Ok((TensorTrain::new(cores)?, t))
}

/// Writes a checkpoint file.
pub fn write_file(path: &Path, tt: &TensorTrain, t: f64) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode(tt, t))?;
    Ok(())
}

/// Reads a checkpoint file.
pub fn read_file(path: &Path) -> Result<(TensorTrain, f64)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}
