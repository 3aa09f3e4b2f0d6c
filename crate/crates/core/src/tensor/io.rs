//! Matrix dump formats.
//!
//! `FLOWMAT1` binary layout, all little-endian:
//!
//! ```text
//! offset 0   8 bytes   ASCII "FLOWMAT1"
//! offset 8   u64       rows
//! offset 16  u64       cols
//! offset 24  f64 × rows·cols, row-major
//! ```
//!
//! The CSV form writes one matrix row per line with 17 significant digits.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::{LinalgError, Matrix};

pub const FLOWMAT_MAGIC: &[u8; 8] = b"FLOWMAT1";

#[derive(Debug, Error)]
pub enum DumpError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("bad magic header, expected FLOWMAT1")]
    BadMagic,
    #[error("matrix of {rows}x{cols} is too large to load")]
    TooLarge { rows: u64, cols: u64 },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Matrix(#[from] LinalgError),
}

pub fn write_flowmat<W: Write>(mut w: W, m: &Matrix) -> io::Result<()> {
    w.write_all(FLOWMAT_MAGIC)?;
    w.write_all(&(m.rows() as u64).to_le_bytes())?;
    w.write_all(&(m.cols() as u64).to_le_bytes())?;
    for v in m.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()
}

pub fn read_flowmat<R: Read>(mut r: R) -> Result<Matrix, DumpError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != FLOWMAT_MAGIC {
        return Err(DumpError::BadMagic);
    }
    let mut word = [0u8; 8];
    r.read_exact(&mut word)?;
    let rows = u64::from_le_bytes(word);
    r.read_exact(&mut word)?;
    let cols = u64::from_le_bytes(word);
    let len = rows
        .checked_mul(cols)
        .filter(|&n| n <= (isize::MAX as u64) / 8)
        .ok_or(DumpError::TooLarge { rows, cols })?;
    let mut data = Vec::with_capacity(len as usize);
    for _ in 0..len {
        r.read_exact(&mut word)?;
        data.push(f64::from_le_bytes(word));
    }
    Ok(Matrix::from_vec(rows as usize, cols as usize, data)?)
}

pub fn save_flowmat(path: impl AsRef<Path>, m: &Matrix) -> io::Result<()> {
    write_flowmat(BufWriter::new(File::create(path)?), m)
}

pub fn load_flowmat(path: impl AsRef<Path>) -> Result<Matrix, DumpError> {
    read_flowmat(BufReader::new(File::open(path)?))
}

/// 17 significant digits, which round-trips every `f64`.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_matrix_csv<W: Write>(mut w: W, m: &Matrix) -> io::Result<()> {
    for i in 0..m.rows() {
        let line: Vec<String> = m.row(i).iter().map(|&v| format_f64(v)).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()
}

pub fn read_matrix_csv<R: BufRead>(r: R) -> Result<Matrix, DumpError> {
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (idx, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let values = line
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| DumpError::Parse {
                line: idx + 1,
                message: e.to_string(),
            })?;
        match cols {
            None => cols = Some(values.len()),
            Some(c) if c != values.len() => {
                return Err(DumpError::Parse {
                    line: idx + 1,
                    message: format!("expected {c} values, found {}", values.len()),
                })
            }
            _ => {}
        }
        data.extend(values);
        rows += 1;
    }
    Ok(Matrix::from_vec(rows, cols.unwrap_or(0), data)?)
}

pub fn save_matrix_csv(path: impl AsRef<Path>, m: &Matrix) -> io::Result<()> {
    write_matrix_csv(BufWriter::new(File::create(path)?), m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    #[test]
    fn flowmat_layout_is_fixed() {
        let m = Matrix::from_rows(&[&[1.0, -2.5]]).unwrap();
        let mut buf = Vec::new();
        write_flowmat(&mut buf, &m).unwrap();
        assert_eq!(&buf[..8], b"FLOWMAT1");
        assert_eq!(&buf[8..16], &1u64.to_le_bytes());
        assert_eq!(&buf[16..24], &2u64.to_le_bytes());
        assert_eq!(&buf[24..32], &1.0f64.to_le_bytes());
        assert_eq!(&buf[32..40], &(-2.5f64).to_le_bytes());
        assert_eq!(buf.len(), 40);
    }

    #[test]
    fn flowmat_and_csv_round_trip_bit_exact() {
        let mut rng = Rng::new(17);
        let m = Matrix::from_fn(4, 3, |_, _| rng.normal() * 1e3);
        let mut buf = Vec::new();
        write_flowmat(&mut buf, &m).unwrap();
        assert_eq!(read_flowmat(buf.as_slice()).unwrap(), m);

        let mut csv = Vec::new();
        write_matrix_csv(&mut csv, &m).unwrap();
        assert_eq!(read_matrix_csv(csv.as_slice()).unwrap(), m);
    }

    #[test]
    fn rejects_bad_magic() {
        let buf = b"FLOWMAT2\0\0\0\0\0\0\0\0\0\0\0\0\0\0\0\0".to_vec();
        assert!(matches!(
            read_flowmat(buf.as_slice()),
            Err(DumpError::BadMagic)
        ));
    }

    #[test]
    fn csv_uses_dot_decimal() {
        assert_eq!(format_f64(0.5), "5.0000000000000000e-1");
    }
}
