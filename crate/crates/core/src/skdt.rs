//! SKDT tensor files.
//!
//! Layout (little-endian, no padding, no footer):
//!
//! | field    | size            | value                         |
//! |----------|-----------------|-------------------------------|
//! | magic    | 4 bytes         | `b"SKDT"`                     |
//! | version  | u16             | 1                             |
//! | dtype    | u8              | 1 (float64)                   |
//! | ndim     | u8              | number of dimensions          |
//! | dims     | ndim × u64      | dimension sizes               |
//! | payload  | numel × f64     | values in row-major order     |

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"SKDT";
pub const VERSION: u16 = 1;
pub const DTYPE_F64: u8 = 1;

const HEADER_FIXED: usize = 4 + 2 + 1 + 1;

pub fn encode(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_FIXED + 8 * t.ndim() + 8 * t.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(DTYPE_F64);
    out.push(u8::try_from(t.ndim()).expect("tensor rank exceeds 255"));
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < HEADER_FIXED {
        let mut magic = [0u8; 4];
        let n = bytes.len().min(4);
        magic[..n].copy_from_slice(&bytes[..n]);
        if magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        return Err(Error::PayloadLengthMismatch {
            expected: 0,
            found: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::VersionMismatch(version));
    }
    if bytes[6] != DTYPE_F64 {
        return Err(Error::DtypeMismatch(bytes[6]));
    }
    let ndim = bytes[7] as usize;
    let dims_end = HEADER_FIXED + 8 * ndim;
    if bytes.len() < dims_end {
        return Err(Error::PayloadLengthMismatch {
            expected: 0,
            found: bytes.len().saturating_sub(HEADER_FIXED),
        });
    }
    let shape: Vec<usize> = bytes[HEADER_FIXED..dims_end]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::InvalidShape(shape));
    }
    let numel = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::InvalidShape(shape.clone()))?;
    let payload = &bytes[dims_end..];
    if Some(payload.len()) != numel.checked_mul(8) {
        return Err(Error::PayloadLengthMismatch {
            expected: numel,
            found: payload.len(),
        });
    }
    let data: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new_finite(shape, data)
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    decode(&fs::read(path)?)
}

pub fn write_tensor(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let mut file = fs::File::create(path)?;
    file.write_all(&encode(t))?;
    file.flush()?;
    Ok(())
}
