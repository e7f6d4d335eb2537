// SPDX-License-Identifier: Apache-2.0

//! Binary feature matrix: magic `DEHF`, `u32` version, `u64` rows, `u64`
//! cols, then row-major little-endian `f64`.

use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::matrix::Matrix;

const MAGIC: &[u8; 4] = b"DEHF";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic {found:?}, expected {expected:?}")]
    MagicMismatch { found: [u8; 4], expected: [u8; 4] },
    #[error("unsupported version {0}")]
    VersionMismatch(u32),
    #[error("file truncated")]
    Truncated,
    #[error("malformed file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub(crate) fn read_exact_or_truncated(
    r: &mut impl Read,
    buf: &mut [u8],
) -> Result<(), FormatError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => FormatError::Truncated,
        _ => FormatError::Io(e),
    })
}

pub(crate) fn read_u32(r: &mut impl Read) -> Result<u32, FormatError> {
    let mut b = [0u8; 4];
    read_exact_or_truncated(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64(r: &mut impl Read) -> Result<u64, FormatError> {
    let mut b = [0u8; 8];
    read_exact_or_truncated(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>, FormatError> {
    let mut bytes = vec![0u8; n.checked_mul(8).ok_or(FormatError::Truncated)?];
    read_exact_or_truncated(r, &mut bytes)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub(crate) fn write_f64s(w: &mut impl Write, xs: &[f64]) -> io::Result<()> {
    let mut bytes = Vec::with_capacity(xs.len() * 8);
    for x in xs {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&bytes)
}

pub(crate) fn check_magic(r: &mut impl Read, expected: &[u8; 4]) -> Result<(), FormatError> {
    let mut found = [0u8; 4];
    read_exact_or_truncated(r, &mut found)?;
    if &found != expected {
        return Err(FormatError::MagicMismatch {
            found,
            expected: *expected,
        });
    }
    Ok(())
}

pub fn encode_matrix(w: &mut impl Write, m: &Matrix) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(m.rows() as u64).to_le_bytes())?;
    w.write_all(&(m.cols() as u64).to_le_bytes())?;
    write_f64s(w, m.data())
}

pub fn decode_matrix(r: &mut impl Read) -> Result<Matrix, FormatError> {
    check_magic(r, MAGIC)?;
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(FormatError::VersionMismatch(version));
    }
    let rows = read_u64(r)? as usize;
    let cols = read_u64(r)? as usize;
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| FormatError::Malformed("shape overflows".into()))?;
    let data = read_f64s(r, n)?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(FormatError::Malformed(
            "trailing bytes after matrix data".into(),
        ));
    }
    Ok(Matrix::from_vec(rows, cols, data))
}

pub fn write_feature_matrix(m: &Matrix, path: impl AsRef<Path>) -> Result<(), FormatError> {
    let mut buf = Vec::with_capacity(24 + m.len() * 8);
    encode_matrix(&mut buf, m)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn read_feature_matrix(path: impl AsRef<Path>) -> Result<Matrix, FormatError> {
    let bytes = std::fs::read(path)?;
    decode_matrix(&mut bytes.as_slice())
}
