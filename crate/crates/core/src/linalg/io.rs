//! Two-file matrix format.
//!
//! A matrix stored under the stem `foo` consists of
//!
//! * `foo.json`: `{"rows": R, "cols": C, "dtype": "f64", "byte_order": "little"}`
//! * `foo.bin`: exactly `R * C * 8` bytes, the entries in row-major order,
//!   each an IEEE-754 binary64 in little-endian byte order.
//!
//! Any extension on the path handed to [`read_matrix`] / [`write_matrix`] is
//! replaced, so `foo`, `foo.json` and `foo.bin` all name the same matrix.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixHeader {
    pub rows: usize,
    pub cols: usize,
    pub dtype: String,
    pub byte_order: String,
}

impl MatrixHeader {
    pub fn for_matrix(m: &Matrix) -> Self {
        Self {
            rows: m.rows(),
            cols: m.cols(),
            dtype: "f64".into(),
            byte_order: "little".into(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.dtype != "f64" {
            return Err(Error::CorruptHeader(format!("dtype `{}`", self.dtype)));
        }
        if self.byte_order != "little" {
            return Err(Error::CorruptHeader(format!(
                "byte order `{}`",
                self.byte_order
            )));
        }
        Ok(())
    }
}

/// `(header, payload)` paths for a matrix stem.
pub fn matrix_paths(path: &Path) -> (PathBuf, PathBuf) {
    (path.with_extension("json"), path.with_extension("bin"))
}

pub fn encode_payload(values: &[f64]) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes
}

pub fn decode_payload(bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() % 8 != 0 {
        return Err(Error::CorruptHeader(format!(
            "payload of {} bytes is not a whole number of f64 values",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

pub fn write_matrix(path: &Path, m: &Matrix) -> Result<()> {
    let (header_path, payload_path) = matrix_paths(path);
    if let Some(dir) = header_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let header = serde_json::to_string_pretty(&MatrixHeader::for_matrix(m))?;
    fs::write(&header_path, header).map_err(|e| Error::io(&header_path, e))?;
    fs::write(&payload_path, encode_payload(m.as_slice())).map_err(|e| Error::io(&payload_path, e))
}

pub fn read_matrix(path: &Path) -> Result<Matrix> {
    let (header_path, payload_path) = matrix_paths(path);
    let text = fs::read_to_string(&header_path).map_err(|e| Error::io(&header_path, e))?;
    let header: MatrixHeader =
        serde_json::from_str(&text).map_err(|e| Error::CorruptHeader(e.to_string()))?;
    header.validate()?;
    let bytes = fs::read(&payload_path).map_err(|e| Error::io(&payload_path, e))?;
    if bytes.len() != header.rows * header.cols * 8 {
        return Err(Error::CorruptHeader(format!(
            "header declares {}x{} but the payload holds {} bytes",
            header.rows,
            header.cols,
            bytes.len()
        )));
    }
    Matrix::from_vec(header.rows, header.cols, decode_payload(&bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn payload_layout_is_row_major_little_endian() {
        let m = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let bytes = encode_payload(m.as_slice());
        assert_eq!(bytes.len(), 32);
        assert_eq!(&bytes[8..16], &2.0f64.to_le_bytes());
        assert_eq!(&bytes[16..24], &3.0f64.to_le_bytes());
    }

    #[test]
    fn rejects_truncated_payload() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m");
        write_matrix(&p, &Matrix::identity(3)).unwrap();
        fs::write(p.with_extension("bin"), [0u8; 16]).unwrap();
        assert!(matches!(read_matrix(&p), Err(Error::CorruptHeader(_))));
    }

    #[test]
    fn rejects_wrong_dtype() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m");
        write_matrix(&p, &Matrix::identity(1)).unwrap();
        fs::write(
            p.with_extension("json"),
            r#"{"rows":1,"cols":1,"dtype":"f32","byte_order":"little"}"#,
        )
        .unwrap();
        assert!(matches!(read_matrix(&p), Err(Error::CorruptHeader(_))));
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(rows in 0usize..6, cols in 0usize..6, seed in any::<u64>()) {
            let mut state = seed;
            let m = Matrix::from_fn(rows, cols, |_, _| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                f64::from_bits((state >> 2) | 0x3000_0000_0000_0000) * if state & 1 == 0 { 1.0 } else { -1.0 }
            });
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("sub/matrix.bin");
            write_matrix(&p, &m).unwrap();
            let back = read_matrix(&p).unwrap();
            prop_assert_eq!(back.shape(), m.shape());
            for (a, b) in back.as_slice().iter().zip(m.as_slice()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
