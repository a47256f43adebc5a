//! Binary matrix files and CSV import.
//!
//! Binary layout (little-endian): `b"LSEM"`, version `u32 = 1`, rows `u64`,
//! cols `u64`, then `rows * cols` `f64` values in column-major order.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use super::{first_non_finite, ModalityMatrix};
use crate::error::{LseError, Result};

pub const MATRIX_MAGIC: [u8; 4] = *b"LSEM";
pub const MATRIX_VERSION: u32 = 1;
const HEADER_LEN: usize = 24;

pub fn encode_matrix(m: &DMatrix<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * m.len());
    out.extend_from_slice(&MATRIX_MAGIC);
    out.extend_from_slice(&MATRIX_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    // nalgebra storage is already column-major.
    for v in m.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes a binary matrix; `origin` is only used in error messages.
pub fn decode_matrix(bytes: &[u8], origin: &Path) -> Result<DMatrix<f64>> {
    if bytes.len() < HEADER_LEN {
        return Err(LseError::format(
            origin,
            format!("header truncated ({} bytes, need {HEADER_LEN})", bytes.len()),
        ));
    }
    if bytes[..4] != MATRIX_MAGIC {
        return Err(LseError::format(origin, "bad magic, expected `LSEM`"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != MATRIX_VERSION {
        return Err(LseError::format(
            origin,
            format!("unsupported version {version}"),
        ));
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let cols = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(HEADER_LEN as u64))
        .ok_or_else(|| LseError::format(origin, format!("dimensions {rows}x{cols} overflow")))?;
    if expected != bytes.len() as u64 {
        return Err(LseError::format(
            origin,
            format!(
                "header declares {rows}x{cols} ({expected} bytes) but file has {} bytes",
                bytes.len()
            ),
        ));
    }
    let (rows, cols) = (rows as usize, cols as usize);
    let values = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    Ok(DMatrix::from_iterator(rows, cols, values))
}

fn parse_csv(text: &[u8], origin: &Path) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| LseError::format(origin, e.to_string()))?;
        let row = record
            .iter()
            .enumerate()
            .map(|(field, s)| {
                s.parse::<f64>().map_err(|_| {
                    LseError::format(
                        origin,
                        format!("line {}, field {}: cannot parse `{s}` as a number", line + 1, field + 1),
                    )
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let cols = rows.first().map_or(0, Vec::len);
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

/// Loads a matrix file, sniffing the binary magic; anything else is read as
/// CSV with one line per feature. The matrix is named after the file stem.
pub fn load_matrix(path: impl AsRef<Path>) -> Result<ModalityMatrix> {
    let path = path.as_ref();
    let values = read_matrix(path)?;
    if let Some((r, c)) = first_non_finite(&values) {
        return Err(LseError::format(
            path,
            format!("non-finite value at row {r}, column {c}"),
        ));
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    ModalityMatrix::new(name, values).map_err(|e| LseError::format(path, e.to_string()))
}

pub(crate) fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let bytes = fs::read(path).map_err(|e| LseError::io(path, e))?;
    if bytes.starts_with(&MATRIX_MAGIC) {
        decode_matrix(&bytes, path)
    } else {
        parse_csv(&bytes, path)
    }
}

pub fn save_matrix(m: &ModalityMatrix, path: impl AsRef<Path>) -> Result<()> {
    write_matrix(m.values(), path.as_ref())
}

pub(crate) fn write_matrix(m: &DMatrix<f64>, path: &Path) -> Result<()> {
    fs::write(path, encode_matrix(m)).map_err(|e| LseError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bits(m: &DMatrix<f64>) -> Vec<u64> {
        m.iter().map(|v| v.to_bits()).collect()
    }

    #[test]
    fn decodes_handwritten_file() {
        let mut bytes = b"LSEM".to_vec();
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&2u64.to_le_bytes());
        bytes.extend_from_slice(&3u64.to_le_bytes());
        for v in [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let m = decode_matrix(&bytes, Path::new("mem")).unwrap();
        assert_eq!(m.shape(), (2, 3));
        // column-major: column 0 is [1, 2]
        assert_eq!(m[(0, 0)], 1.0);
        assert_eq!(m[(1, 0)], 2.0);
        assert_eq!(m[(0, 2)], 5.0);
    }

    #[test]
    fn smallest_file_size() {
        let bytes = encode_matrix(&DMatrix::from_element(1, 1, 0.0));
        assert_eq!(bytes.len(), 32);
        assert_eq!(decode_matrix(&bytes, Path::new("mem")).unwrap()[(0, 0)], 0.0);
    }

    #[test]
    fn ieee_edge_values_survive() {
        let m = DMatrix::from_row_slice(1, 3, &[-0.0, 1e-300, f64::MIN_POSITIVE / 4.0]);
        let back = decode_matrix(&encode_matrix(&m), Path::new("mem")).unwrap();
        assert_eq!(bits(&m), bits(&back));
    }

    #[test]
    fn rejects_bad_headers() {
        let good = encode_matrix(&DMatrix::from_element(2, 2, 1.0));
        assert!(decode_matrix(&good[..10], Path::new("m")).is_err());
        let mut short = good.clone();
        short.pop();
        let err = decode_matrix(&short, Path::new("m")).unwrap_err().to_string();
        assert!(err.contains("declares 2x2"), "{err}");
        let mut v2 = good.clone();
        v2[4] = 2;
        assert!(decode_matrix(&v2, Path::new("m")).is_err());
        let mut huge = good;
        huge[8..16].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(decode_matrix(&huge, Path::new("m")).is_err());
    }

    #[test]
    fn csv_rows_are_features() {
        let m = parse_csv(b"1.0,2.0\n3.0,4.0", Path::new("m")).unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
    }

    #[test]
    fn csv_errors_carry_location() {
        let err = parse_csv(b"1,2\n3,x", Path::new("m")).unwrap_err().to_string();
        assert!(err.contains("line 2, field 2"), "{err}");
        assert!(parse_csv(b"1,2\n3", Path::new("m")).is_err());
    }

    #[test]
    fn load_rejects_non_finite() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        std::fs::write(&p, "1,2\n3,inf\n").unwrap();
        let err = load_matrix(&p).unwrap_err().to_string();
        assert!(err.contains("row 1, column 1"), "{err}");
        let p = dir.path().join("bad.lsem");
        std::fs::write(&p, encode_matrix(&DMatrix::from_element(1, 2, f64::NAN))).unwrap();
        assert!(load_matrix(&p).is_err());
    }

    proptest! {
        #[test]
        fn binary_round_trip_is_bit_exact(
            rows in 1usize..6,
            cols in 1usize..6,
            raw in proptest::collection::vec(any::<u64>(), 36),
        ) {
            // arbitrary bit patterns, including NaN payloads: the codec itself is lossless
            let m = DMatrix::from_fn(rows, cols, |i, j| f64::from_bits(raw[i * 6 + j]));
            let back = decode_matrix(&encode_matrix(&m), Path::new("mem")).unwrap();
            prop_assert_eq!(bits(&m), bits(&back));
        }
    }
}
