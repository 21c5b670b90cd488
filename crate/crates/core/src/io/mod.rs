// SPDX-License-Identifier: MIT OR Apache-2.0

//! On-disk containers.
//!
//! Every container shares one envelope:
//!
//! ```text
//! offset  size  field
//! 0       4     magic (ASCII: "SEAD" activations, "SEAP" projections, "SEAM" toy model)
//! 4       4     format version, u32 little-endian (currently 1)
//! 8       4     header length H, u32 little-endian
//! 12      H     UTF-8 JSON header
//! 12+H    ...   container-specific fixed block (SEAP only), then f32 LE payload
//! ```
//!
//! The JSON header fully determines the payload length; readers reject both
//! short and over-long payloads. See `docs/FORMATS.md` for the per-container
//! layouts.

mod activations;
mod bundle;

pub use activations::{read_activation_set, write_activation_set, ActivationSet, LayerSamples, Role};
pub use bundle::{read_projection_bundle, write_projection_bundle, LayerProjection, ProjectionBundle};

use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{de::DeserializeOwned, Serialize};

use crate::error::{Result, SeaError};

pub const FORMAT_VERSION: u32 = 1;

pub const MAGIC_ACTIVATIONS: &[u8; 4] = b"SEAD";
pub const MAGIC_PROJECTIONS: &[u8; 4] = b"SEAP";
pub const MAGIC_MODEL: &[u8; 4] = b"SEAM";

/// Dense column-major matrix at storage precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix32 {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix32 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from column-major data.
    pub fn from_column_major(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(SeaError::Shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix whose columns are the given vectors.
    pub fn from_columns(rows: usize, columns: &[Vec<f32>]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * columns.len());
        for (j, c) in columns.iter().enumerate() {
            if c.len() != rows {
                return Err(SeaError::Shape(format!(
                    "column {j} has length {}, expected {rows}",
                    c.len()
                )));
            }
            data.extend_from_slice(c);
        }
        Ok(Self {
            rows,
            cols: columns.len(),
            data,
        })
    }

    /// Rounds a 64-bit matrix to storage precision.
    pub fn from_f64(m: &DMatrix<f64>) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn to_f64(&self) -> DMatrix<f64> {
        DMatrix::from_iterator(self.rows, self.cols, self.data.iter().map(|&v| f64::from(v)))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn column(&self, j: usize) -> &[f32] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn column_mut(&mut self, j: usize) -> &mut [f32] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.data[j * self.rows + i]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest entry of `|MᵀM − I|`, computed in 64-bit.
    pub fn orthonormality_deviation(&self) -> f64 {
        let mut worst = 0.0_f64;
        for a in 0..self.cols {
            let ca = self.column(a);
            for b in a..self.cols {
                let cb = self.column(b);
                let dot: f64 = ca.iter().zip(cb).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum();
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }
}

/// Counts bytes passed through to the inner sink.
struct CountingWriter<'a, W: Write + ?Sized> {
    inner: &'a mut W,
    written: u64,
}

impl<W: Write + ?Sized> Write for CountingWriter<'_, W> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.written += n as u64;
        Ok(n)
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.inner.flush()
    }
}

/// Writes one container: envelope, optional fixed block, then the f32 payload
/// produced by `payload`. Returns the number of bytes emitted.
pub(crate) fn write_container<W, H, F>(
    sink: &mut W,
    magic: &[u8; 4],
    header: &H,
    fixed_block: &[u8],
    payload: F,
) -> Result<u64>
where
    W: Write + ?Sized,
    H: Serialize,
    F: FnOnce(&mut dyn FnMut(&[f32]) -> std::io::Result<()>) -> std::io::Result<()>,
{
    let json = serde_json::to_vec(header).map_err(|e| SeaError::Header(e.to_string()))?;
    let json_len = u32::try_from(json.len())
        .map_err(|_| SeaError::Header("header exceeds 4 GiB".into()))?;

    let mut out = CountingWriter {
        inner: sink,
        written: 0,
    };
    out.write_all(magic)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&json_len.to_le_bytes())?;
    out.write_all(&json)?;
    out.write_all(fixed_block)?;

    let mut buf = Vec::with_capacity(4096);
    {
        let mut emit = |values: &[f32]| -> std::io::Result<()> {
            for v in values {
                buf.extend_from_slice(&v.to_le_bytes());
                if buf.len() >= 4096 {
                    out.write_all(&buf)?;
                    buf.clear();
                }
            }
            Ok(())
        };
        payload(&mut emit)?;
    }
    out.write_all(&buf)?;
    out.flush()?;
    Ok(out.written)
}

/// Parsed envelope of a container: its JSON header and everything after it.
pub(crate) struct Envelope<H> {
    pub header: H,
    pub body: Vec<u8>,
}

pub(crate) fn read_envelope<R, H>(source: &mut R, magic: &[u8; 4]) -> Result<Envelope<H>>
where
    R: Read + ?Sized,
    H: DeserializeOwned,
{
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;

    if bytes.len() < 4 || &bytes[..4] != magic {
        let found = String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned();
        return Err(SeaError::BadMagic {
            expected: String::from_utf8_lossy(magic).into_owned(),
            found,
        });
    }
    if bytes.len() < 12 {
        return Err(SeaError::Header("container shorter than its fixed envelope".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(SeaError::UnsupportedVersion(version));
    }
    let json_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let json_end = 12usize
        .checked_add(json_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| SeaError::Header(format!("declared header length {json_len} overruns the container")))?;
    let header = serde_json::from_slice(&bytes[12..json_end]).map_err(|e| SeaError::Header(e.to_string()))?;
    let body = bytes.split_off(json_end);
    Ok(Envelope { header, body })
}

/// Decodes exactly `expected` little-endian f32 values from `bytes`.
pub(crate) fn decode_f32s(bytes: &[u8], expected: usize) -> Result<Vec<f32>> {
    let want = expected * 4;
    if bytes.len() != want {
        return Err(SeaError::LengthMismatch {
            expected: want,
            found: bytes.len(),
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
        .collect())
}

/// Splits `count` leading elements off a slice cursor.
pub(crate) fn take<'a, T>(cursor: &mut &'a [T], count: usize) -> &'a [T] {
    let (head, tail) = cursor.split_at(count);
    *cursor = tail;
    head
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_columns_are_orthonormal() {
        let m = Matrix32::from_columns(3, &[vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        assert_eq!(m.orthonormality_deviation(), 0.0);
    }

    #[test]
    fn ragged_columns_rejected() {
        assert!(Matrix32::from_columns(2, &[vec![1.0, 0.0], vec![1.0]]).is_err());
    }

    #[test]
    fn f64_round_trip_keeps_column_major_order() {
        let m = Matrix32::from_column_major(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let d = m.to_f64();
        assert_eq!(d[(1, 0)], 2.0);
        assert_eq!(d[(0, 1)], 3.0);
        assert_eq!(Matrix32::from_f64(&d), m);
    }
}
