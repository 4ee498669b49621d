//! Binary matrix format: a 16-byte header of two little-endian `u64`
//! (rows, cols) followed by the row-major little-endian payload, either `f32`
//! (embedding export) or `f64` (checkpoints). Readers infer the element width
//! from the payload length.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::DenseMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn width(self) -> usize {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }
}

pub fn write_dense_to(w: &mut impl Write, m: &DenseMatrix, precision: Precision) -> std::io::Result<()> {
    w.write_all(&(m.rows() as u64).to_le_bytes())?;
    w.write_all(&(m.cols() as u64).to_le_bytes())?;
    for &v in m.data() {
        match precision {
            Precision::F32 => w.write_all(&(v as f32).to_le_bytes())?,
            Precision::F64 => w.write_all(&v.to_le_bytes())?,
        }
    }
    Ok(())
}

pub fn write_dense(path: &Path, m: &DenseMatrix, precision: Precision) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_dense_to(&mut w, m, precision)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Decodes one matrix from `bytes`; returns it with the number of bytes consumed.
/// `precision` of `None` infers the width from `bytes.len()`, which must then be exact.
pub fn read_dense_from(
    bytes: &[u8],
    precision: Option<Precision>,
) -> std::result::Result<(DenseMatrix, usize), String> {
    if bytes.len() < 16 {
        return Err("truncated header".into());
    }
    let rows = u64::from_le_bytes(bytes[0..8].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| format!("implausible shape {rows}x{cols}"))?;
    let payload = bytes.len() - 16;
    let precision = match precision {
        Some(p) => p,
        None if payload == count * 4 => Precision::F32,
        None if payload == count * 8 => Precision::F64,
        None => {
            return Err(format!(
                "payload of {payload} bytes fits neither f32 nor f64 for {rows}x{cols}"
            ))
        }
    };
    let width = precision.width();
    let needed = count * width;
    if payload < needed {
        return Err(format!("payload of {payload} bytes, need {needed}"));
    }
    let data: Vec<f64> = bytes[16..16 + needed]
        .chunks_exact(width)
        .map(|c| match precision {
            Precision::F32 => f32::from_le_bytes(c.try_into().unwrap()) as f64,
            Precision::F64 => f64::from_le_bytes(c.try_into().unwrap()),
        })
        .collect();
    let m = DenseMatrix::from_vec(rows, cols, data).map_err(|e| e.to_string())?;
    Ok((m, 16 + needed))
}

pub fn read_dense(path: &Path) -> Result<DenseMatrix> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    read_dense_from(&bytes, None)
        .map(|(m, _)| m)
        .map_err(|msg| Error::load(path, 0, msg))
}
