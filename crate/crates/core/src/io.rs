//! Embedding files.
//!
//! The binary layout (`TQXE` version 1) is, all little-endian:
//!
//! | bytes        | content                           |
//! |--------------|-----------------------------------|
//! | 4            | magic `TQXE`                      |
//! | 4            | `u32` version, always 1           |
//! | 8            | `u64` row count N                 |
//! | 8            | `u64` dimension D                 |
//! | 4·N·D        | `f32` values, row-major           |
//! | rest         | UTF-8 JSON array of N id strings  |
//!
//! A CSV fallback with header `id,dim0,...,dim{D-1}` is accepted for up to
//! [`CSV_MAX_ROWS`] rows.

use std::fs;
use std::path::Path;

use crate::scalar::Scalar;
use crate::tensor::EmbeddingMatrix;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TQXE";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 24;
pub const CSV_MAX_ROWS: usize = 10_000;

/// Serializes to the binary layout. Values are stored as `f32`.
pub fn encode<T: Scalar>(m: &EmbeddingMatrix<T>) -> Vec<u8> {
    let ids = serde_json::to_vec(m.ids()).expect("string list always serializes");
    let mut out = Vec::with_capacity(HEADER_LEN + m.values().len() * 4 + ids.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.dim() as u64).to_le_bytes());
    for v in m.values() {
        out.extend_from_slice(&(v.to_f64_lossless() as f32).to_le_bytes());
    }
    out.extend_from_slice(&ids);
    out
}

/// Parses the binary layout. `origin` only labels errors.
pub fn decode<T: Scalar>(bytes: &[u8], origin: &Path) -> Result<EmbeddingMatrix<T>> {
    let bad = |reason: &str| Error::format(origin, reason);
    if bytes.len() < HEADER_LEN {
        return Err(bad("truncated header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(bad("missing TQXE magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let d = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let payload = n
        .checked_mul(d)
        .and_then(|c| c.checked_mul(4))
        .and_then(|c| usize::try_from(c).ok())
        .filter(|&c| c <= bytes.len() - HEADER_LEN)
        .ok_or_else(|| bad("value block exceeds file size"))?;
    let (n, d) = (n as usize, d as usize);
    let values: Vec<T> = bytes[HEADER_LEN..HEADER_LEN + payload]
        .chunks_exact(4)
        .map(|c| T::from_f64_lossy(f32::from_le_bytes(c.try_into().unwrap()) as f64))
        .collect();
    let ids: Vec<String> = serde_json::from_slice(&bytes[HEADER_LEN + payload..])
        .map_err(|e| bad(&format!("id block: {e}")))?;
    if ids.len() != n {
        return Err(bad(&format!("{} ids for {n} rows", ids.len())));
    }
    EmbeddingMatrix::new(ids, d, values)
}

pub fn write_tqxe<T: Scalar>(path: &Path, m: &EmbeddingMatrix<T>) -> Result<()> {
    fs::write(path, encode(m)).map_err(|e| Error::io(path, e))
}

pub fn read_tqxe<T: Scalar>(path: &Path) -> Result<EmbeddingMatrix<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

pub fn read_csv<T: Scalar>(path: &Path) -> Result<EmbeddingMatrix<T>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::format(path, e.to_string()))?
        .clone();
    if headers.get(0) != Some("id") || headers.len() < 2 {
        return Err(Error::format(path, "header must be `id,dim0,...`"));
    }
    for (j, h) in headers.iter().skip(1).enumerate() {
        if h != format!("dim{j}") {
            return Err(Error::format(path, format!("unexpected column `{h}`")));
        }
    }
    let dim = headers.len() - 1;
    let mut ids = Vec::new();
    let mut values = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::format(path, e.to_string()))?;
        if ids.len() == CSV_MAX_ROWS {
            return Err(Error::format(
                path,
                format!("CSV embeddings are limited to {CSV_MAX_ROWS} rows"),
            ));
        }
        ids.push(record[0].to_string());
        for field in record.iter().skip(1) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::format(path, format!("row {line}: bad number `{field}`")))?;
            values.push(T::from_f64_lossy(v));
        }
    }
    EmbeddingMatrix::new(ids, dim, values)
}

pub fn write_csv<T: Scalar>(path: &Path, m: &EmbeddingMatrix<T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let mut header = vec!["id".to_string()];
    header.extend((0..m.dim()).map(|j| format!("dim{j}")));
    let wrap = |e: csv::Error| Error::format(path, e.to_string());
    w.write_record(&header).map_err(wrap)?;
    for (id, row) in m.ids().iter().zip(m.iter_rows()) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads either format, sniffing the magic bytes.
pub fn load_embeddings<T: Scalar>(path: &Path) -> Result<EmbeddingMatrix<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(MAGIC) {
        decode(&bytes, path)
    } else {
        read_csv(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EmbeddingMatrix<f32> {
        EmbeddingMatrix::from_rows(
            vec!["img-a".into(), "img-b".into()],
            &[vec![0.5, -1.25, 3.0], vec![1e-3, 0.0, -7.5]],
        )
        .unwrap()
    }

    #[test]
    fn header_layout_is_little_endian() {
        let bytes = encode(&sample());
        assert_eq!(&bytes[..4], b"TQXE");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(&bytes[8..16], &[2, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&bytes[16..24], &[3, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&bytes[24..28], &0.5f32.to_le_bytes());
        assert_eq!(&bytes[24 + 24..], br#"["img-a","img-b"]"#);
    }

    #[test]
    fn decode_rejects_garbage() {
        let p = Path::new("mem");
        assert!(decode::<f32>(b"TQX", p).is_err());
        let mut bytes = encode(&sample());
        bytes[4] = 2;
        assert!(decode::<f32>(&bytes, p).is_err());
        let bytes = encode(&sample());
        assert!(decode::<f32>(&bytes[..30], p).is_err());
    }

    #[test]
    fn csv_and_binary_agree() {
        let dir = tempfile::tempdir().unwrap();
        let m = sample();
        let bin = dir.path().join("e.tqxe");
        let csv = dir.path().join("e.csv");
        write_tqxe(&bin, &m).unwrap();
        write_csv(&csv, &m).unwrap();
        let a: EmbeddingMatrix<f32> = load_embeddings(&bin).unwrap();
        let b: EmbeddingMatrix<f32> = load_embeddings(&csv).unwrap();
        assert_eq!(a, m);
        assert_eq!(b, m);
    }

    #[test]
    fn csv_header_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        fs::write(&p, "name,x,y\na,1,2\n").unwrap();
        assert!(read_csv::<f32>(&p).is_err());
    }
}
