//! Binary feature files: `FEAT`, frame count and feature dimension as
//! little-endian `u32`, then row-major little-endian `f32` values.

use std::path::Path;

use crnt_core::numerics::Tensor;

use crate::error::{io_err, Error, Result};

const MAGIC: &[u8; 4] = b"FEAT";
const HEADER_LEN: usize = 12;

pub fn encode_features(t: &Tensor) -> Vec<u8> {
    let (rows, cols) = (t.rows(), t.cols());
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * rows * cols);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    for &x in t.data() {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
    out
}

pub fn decode_features(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let bad = |detail: String| Error::Format {
        path: path.to_path_buf(),
        detail,
    };
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(bad("not a feature file".into()));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = HEADER_LEN + 4 * rows * cols;
    if bytes.len() != expected {
        return Err(bad(format!(
            "{} bytes for {rows} x {cols} features (expected {expected})",
            bytes.len()
        )));
    }
    if rows == 0 || cols == 0 {
        return Err(bad(format!("empty feature matrix {rows} x {cols}")));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(Tensor::matrix(rows, cols, data)?)
}

pub fn write_features(path: &Path, t: &Tensor) -> Result<()> {
    std::fs::write(path, encode_features(t)).map_err(io_err(path))
}

pub fn read_features(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    decode_features(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_length_and_round_trip() {
        let t = Tensor::matrix(3, 2, vec![0.5, -1.0, 2.25, 0.0, 1e-3, 7.0]).unwrap();
        let bytes = encode_features(&t);
        assert_eq!(bytes.len(), 12 + 4 * 3 * 2);
        let back = decode_features(&bytes, Path::new("x")).unwrap();
        assert_eq!(back.shape(), t.shape());
        assert!(back.max_abs_diff(&t) < 1e-7);
    }

    #[test]
    fn rejects_truncated_payload() {
        let t = Tensor::matrix(2, 2, vec![1.0; 4]).unwrap();
        let bytes = encode_features(&t);
        assert!(decode_features(&bytes[..bytes.len() - 1], Path::new("x")).is_err());
        assert!(decode_features(b"NOPE", Path::new("x")).is_err());
    }
}
