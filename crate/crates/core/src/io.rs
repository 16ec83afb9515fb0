//! TEXMEX vector containers.
//!
//! Each record is a little-endian `i32` dimension `d` followed by `d`
//! components: `f32` for fvecs, `i32` for ivecs and `u8` for bvecs. All
//! records in a file share the same `d`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::data::VectorSet;
use crate::error::{Error, Result};

/// Parses a whole container, given the byte width of one component.
fn parse_records(bytes: &[u8], elem: usize) -> Result<(usize, Vec<&[u8]>)> {
    if bytes.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut records = Vec::new();
    let mut dim = None;
    let mut pos = 0;
    while pos < bytes.len() {
        let record = records.len();
        let header = bytes.get(pos..pos + 4).ok_or(Error::TruncatedRecord { record })?;
        let d = i32::from_le_bytes(header.try_into().unwrap());
        if d <= 0 {
            return Err(Error::InvalidDimension { record, dim: d as i64 });
        }
        let d = d as usize;
        match dim {
            None => dim = Some(d),
            Some(expected) if expected != d => {
                return Err(Error::DimensionMismatch { expected, found: d });
            }
            _ => {}
        }
        let start = pos + 4;
        let end = start + d * elem;
        let payload = bytes.get(start..end).ok_or(Error::TruncatedRecord { record })?;
        records.push(payload);
        pos = end;
    }
    Ok((dim.unwrap(), records))
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut buf)?;
    Ok(buf)
}

pub fn parse_fvecs(bytes: &[u8]) -> Result<VectorSet> {
    let (dim, records) = parse_records(bytes, 4)?;
    let mut data = Vec::with_capacity(records.len() * dim);
    for r in records {
        data.extend(r.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())));
    }
    VectorSet::new(data, dim)
}

pub fn parse_ivecs(bytes: &[u8]) -> Result<Vec<Vec<i32>>> {
    let (_, records) = parse_records(bytes, 4)?;
    Ok(records
        .into_iter()
        .map(|r| r.chunks_exact(4).map(|c| i32::from_le_bytes(c.try_into().unwrap())).collect())
        .collect())
}

/// bvecs components are widened to `f32`.
pub fn parse_bvecs(bytes: &[u8]) -> Result<VectorSet> {
    let (dim, records) = parse_records(bytes, 1)?;
    let mut data = Vec::with_capacity(records.len() * dim);
    for r in records {
        data.extend(r.iter().map(|&b| b as f32));
    }
    VectorSet::new(data, dim)
}

pub fn load_fvecs(path: impl AsRef<Path>) -> Result<VectorSet> {
    parse_fvecs(&read_all(path.as_ref())?)
}

pub fn load_ivecs(path: impl AsRef<Path>) -> Result<Vec<Vec<i32>>> {
    parse_ivecs(&read_all(path.as_ref())?)
}

pub fn load_bvecs(path: impl AsRef<Path>) -> Result<VectorSet> {
    parse_bvecs(&read_all(path.as_ref())?)
}

/// Headerless little-endian `f32` matrix with a caller-supplied dimension.
pub fn load_raw_f32(path: impl AsRef<Path>, dim: usize) -> Result<VectorSet> {
    let bytes = read_all(path.as_ref())?;
    if bytes.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if bytes.len() % (4 * dim.max(1)) != 0 {
        return Err(Error::TruncatedRecord {
            record: bytes.len() / (4 * dim.max(1)),
        });
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    VectorSet::new(data, dim)
}

pub fn write_fvecs(w: &mut impl Write, v: &VectorSet) -> Result<()> {
    let d = (v.dim() as i32).to_le_bytes();
    for row in v.rows() {
        w.write_all(&d)?;
        for x in row {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn write_ivecs(w: &mut impl Write, rows: &[Vec<i32>]) -> Result<()> {
    for row in rows {
        w.write_all(&(row.len() as i32).to_le_bytes())?;
        for x in row {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_fvecs(path: impl AsRef<Path>, v: &VectorSet) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_fvecs(&mut w, v)?;
    w.flush()?;
    Ok(())
}

pub fn save_ivecs(path: impl AsRef<Path>, rows: &[Vec<i32>]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_ivecs(&mut w, rows)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(d: i32, payload: &[u8]) -> Vec<u8> {
        let mut b = d.to_le_bytes().to_vec();
        b.extend_from_slice(payload);
        b
    }

    #[test]
    fn single_fvecs_record() {
        let mut payload = 1.0f32.to_le_bytes().to_vec();
        payload.extend(2.0f32.to_le_bytes());
        let v = parse_fvecs(&record(2, &payload)).unwrap();
        assert_eq!((v.len(), v.dim()), (1, 2));
        assert_eq!(v.as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn empty_file_is_an_error() {
        assert!(matches!(parse_fvecs(&[]), Err(Error::EmptyDataset)));
    }

    #[test]
    fn single_ivecs_record() {
        let rows = parse_ivecs(&[1, 0, 0, 0, 7, 0, 0, 0]).unwrap();
        assert_eq!(rows, vec![vec![7]]);
    }

    #[test]
    fn truncated_payload() {
        let err = parse_ivecs(&[2, 0, 0, 0, 7, 0, 0, 0]).unwrap_err();
        assert!(matches!(err, Error::TruncatedRecord { record: 0 }));
        let err = parse_ivecs(&[1, 0, 0, 0, 7, 0, 0, 0, 1, 0]).unwrap_err();
        assert!(matches!(err, Error::TruncatedRecord { record: 1 }));
    }

    #[test]
    fn mismatched_and_invalid_dims() {
        let mut b = record(1, &[7, 0, 0, 0]);
        b.extend(record(2, &[1, 0, 0, 0, 2, 0, 0, 0]));
        assert!(matches!(parse_ivecs(&b), Err(Error::DimensionMismatch { expected: 1, found: 2 })));
        assert!(matches!(parse_fvecs(&record(0, &[])), Err(Error::InvalidDimension { .. })));
        assert!(matches!(parse_fvecs(&record(-3, &[])), Err(Error::InvalidDimension { .. })));
    }

    #[test]
    fn bvecs_widen_to_float() {
        let v = parse_bvecs(&record(3, &[0, 128, 255])).unwrap();
        assert_eq!(v.as_slice(), &[0.0, 128.0, 255.0]);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.fvecs");
        let v = VectorSet::new(vec![0.5, -1.0, 3.25, 4.0], 2).unwrap();
        save_fvecs(&path, &v).unwrap();
        assert_eq!(load_fvecs(&path).unwrap(), v);
        let ipath = dir.path().join("x.ivecs");
        save_ivecs(&ipath, &[vec![1, 2], vec![3, 4]]).unwrap();
        assert_eq!(load_ivecs(&ipath).unwrap(), vec![vec![1, 2], vec![3, 4]]);
    }

    proptest! {
        #[test]
        fn fvecs_bytes_round_trip(dim in 1usize..9, rows in 1usize..12, seed in any::<u32>()) {
            let mut bytes = Vec::new();
            let mut s = seed;
            for _ in 0..rows {
                bytes.extend((dim as i32).to_le_bytes());
                for _ in 0..dim {
                    s = s.wrapping_mul(1664525).wrapping_add(1013904223);
                    let x = (s >> 8) as f32 / 1024.0 - 8000.0;
                    bytes.extend(x.to_le_bytes());
                }
            }
            let v = parse_fvecs(&bytes).unwrap();
            let mut out = Vec::new();
            write_fvecs(&mut out, &v).unwrap();
            prop_assert_eq!(out, bytes);
        }
    }
}
