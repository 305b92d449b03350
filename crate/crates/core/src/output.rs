//! Artifact serialization: CSV with round-trip-exact doubles and a dense
//! binary matrix container.
//!
//! CSV numbers are written with 17 significant digits, '.' decimal point,
//! no locale, so `f64` values survive a write/read cycle bit-exactly.

use std::io::{Read, Write};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Format one double with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{:.16e}", x)
}

/// Write a dense real matrix as row-major CSV.
pub fn write_matrix_csv<W: Write>(w: &mut W, m: &DMatrix<f64>) -> Result<()> {
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| fmt_f64(m[(i, j)])).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Read a matrix back from row-major CSV.
pub fn read_matrix_csv<R: Read>(r: &mut R) -> Result<DMatrix<f64>> {
    let mut text = String::new();
    r.read_to_string(&mut text)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|s| s.trim().parse::<f64>()).collect();
        rows.push(row.map_err(|e| Error::Contract(format!("bad CSV number: {e}")))?);
    }
    if rows.is_empty() {
        return Err(Error::Contract("empty CSV matrix".into()));
    }
    let ncols = rows[0].len();
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Contract("ragged CSV matrix".into()));
    }
    let nrows = rows.len();
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

const MATRIX_MAGIC: &[u8; 8] = b"DMATRIX0";

/// Write a dense real matrix in the binary container
/// (magic, u64 rows, u64 cols, row-major little-endian f64).
pub fn write_matrix_bin<W: Write>(w: &mut W, m: &DMatrix<f64>) -> Result<()> {
    w.write_all(MATRIX_MAGIC)?;
    w.write_all(&(m.nrows() as u64).to_le_bytes())?;
    w.write_all(&(m.ncols() as u64).to_le_bytes())?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            w.write_all(&m[(i, j)].to_le_bytes())?;
        }
    }
    Ok(())
}

/// Read a matrix from the binary container.
pub fn read_matrix_bin<R: Read>(r: &mut R) -> Result<DMatrix<f64>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MATRIX_MAGIC {
        return Err(Error::Contract("bad matrix container magic".into()));
    }
    let mut buf8 = [0u8; 8];
    r.read_exact(&mut buf8)?;
    let nrows = u64::from_le_bytes(buf8) as usize;
    r.read_exact(&mut buf8)?;
    let ncols = u64::from_le_bytes(buf8) as usize;
    let mut data = vec![0.0f64; nrows * ncols];
    for x in data.iter_mut() {
        r.read_exact(&mut buf8)?;
        *x = f64::from_le_bytes(buf8);
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| data[i * ncols + j]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f64_round_trips_through_csv() {
        for &x in &[0.1, 1.0 / 3.0, -2.5e-17, 6.02e23, f64::MIN_POSITIVE] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
        }
    }

    #[test]
    fn matrix_round_trips_through_both_containers() {
        let m = DMatrix::from_fn(3, 2, |i, j| (i as f64 + 1.0) / (j as f64 + 3.0));
        let mut csv = Vec::new();
        write_matrix_csv(&mut csv, &m).unwrap();
        assert_eq!(read_matrix_csv(&mut csv.as_slice()).unwrap(), m);
        let mut bin = Vec::new();
        write_matrix_bin(&mut bin, &m).unwrap();
        assert_eq!(read_matrix_bin(&mut bin.as_slice()).unwrap(), m);
    }
}
