//! IDX (MNIST) file reading, plain or gzip-compressed.

use std::fs::File;
use std::io::{self, BufReader, Read};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use thiserror::Error;
use v2xfl_core::fl::Dataset;

#[derive(Debug, Error)]
pub enum IdxError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("bad magic number {0:#010x}")]
    BadMagic(u32),
    #[error("expected {expected} dimensions, found {found}")]
    Dimensions { expected: usize, found: usize },
    #[error("truncated payload: expected {expected} bytes, got {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("label {0} out of range")]
    Label(u8),
    #[error(transparent)]
    Core(#[from] v2xfl_core::Error),
}

/// A decoded IDX tensor of unsigned bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

/// Parses an IDX byte stream. Only the unsigned-byte element type (0x08) is supported.
pub fn parse_idx(mut r: impl Read) -> Result<IdxArray, IdxError> {
    let io = |source| IdxError::Io { path: PathBuf::from("<stream>"), source };
    let mut head = [0u8; 4];
    r.read_exact(&mut head).map_err(io)?;
    let magic = u32::from_be_bytes(head);
    if head[0] != 0 || head[1] != 0 || head[2] != 0x08 || head[3] == 0 {
        return Err(IdxError::BadMagic(magic));
    }
    let mut dims = Vec::with_capacity(head[3] as usize);
    for _ in 0..head[3] {
        let mut d = [0u8; 4];
        r.read_exact(&mut d).map_err(|_| IdxError::Truncated { expected: 4, actual: 0 })?;
        dims.push(u32::from_be_bytes(d) as usize);
    }
    let expected: usize = dims.iter().product();
    let mut data = Vec::with_capacity(expected);
    r.take(expected as u64).read_to_end(&mut data).map_err(io)?;
    if data.len() != expected {
        return Err(IdxError::Truncated { expected, actual: data.len() });
    }
    Ok(IdxArray { dims, data })
}

/// Reads an IDX file, decompressing when the name ends in `.gz`.
pub fn read_idx(path: &Path) -> Result<IdxArray, IdxError> {
    let file = File::open(path).map_err(|source| IdxError::Io { path: path.into(), source })?;
    let reader = BufReader::new(file);
    if path.extension().is_some_and(|e| e == "gz") {
        parse_idx(GzDecoder::new(reader))
    } else {
        parse_idx(reader)
    }
}

/// Pairs an image tensor `[n, rows, cols]` with a label vector `[n]`; pixels
/// are scaled to `[0, 1]`.
pub fn to_dataset(images: &IdxArray, labels: &IdxArray, num_classes: usize) -> Result<Dataset, IdxError> {
    if images.dims.len() != 3 {
        return Err(IdxError::Dimensions { expected: 3, found: images.dims.len() });
    }
    if labels.dims.len() != 1 {
        return Err(IdxError::Dimensions { expected: 1, found: labels.dims.len() });
    }
    if images.dims[0] != labels.dims[0] {
        return Err(IdxError::CountMismatch { images: images.dims[0], labels: labels.dims[0] });
    }
    if let Some(&bad) = labels.data.iter().find(|&&l| l as usize >= num_classes) {
        return Err(IdxError::Label(bad));
    }
    let dim = images.dims[1] * images.dims[2];
    let features = images.data.iter().map(|&p| p as f32 / 255.0).collect();
    Ok(Dataset::new(features, labels.data.clone(), dim, num_classes)?)
}

fn locate(dir: &Path, stem: &str) -> PathBuf {
    let gz = dir.join(format!("{stem}.gz"));
    if gz.exists() {
        gz
    } else {
        dir.join(stem)
    }
}

/// Loads the standard four MNIST files from `dir` (each optionally gzipped).
pub fn load_mnist(dir: &Path) -> Result<(Dataset, Dataset), IdxError> {
    let load = |img: &str, lbl: &str| -> Result<Dataset, IdxError> {
        to_dataset(&read_idx(&locate(dir, img))?, &read_idx(&locate(dir, lbl))?, 10)
    };
    Ok((
        load("train-images-idx3-ubyte", "train-labels-idx1-ubyte")?,
        load("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")?,
    ))
}

/// Serializes an unsigned-byte IDX tensor.
pub fn encode_idx(dims: &[usize], data: &[u8]) -> Vec<u8> {
    let mut out = vec![0, 0, 0x08, dims.len() as u8];
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(data);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let bytes = encode_idx(&[2, 2, 2], &[0, 255, 10, 20, 30, 40, 50, 60]);
        let a = parse_idx(&bytes[..]).unwrap();
        assert_eq!(a.dims, vec![2, 2, 2]);
        let labels = parse_idx(&encode_idx(&[2], &[3, 9])[..]).unwrap();
        let d = to_dataset(&a, &labels, 10).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.sample(0)[1], 1.0);
        assert_eq!(d.label(1), 9);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(parse_idx(&[0u8, 0, 0x0d, 1, 0, 0, 0, 1, 0][..]), Err(IdxError::BadMagic(_))));
        let short = encode_idx(&[4], &[1, 2]);
        assert!(matches!(parse_idx(&short[..]), Err(IdxError::Truncated { expected: 4, actual: 2 })));
        let img = parse_idx(&encode_idx(&[1, 2], &[0, 0])[..]).unwrap();
        let lbl = parse_idx(&encode_idx(&[1], &[0])[..]).unwrap();
        assert!(matches!(to_dataset(&img, &lbl, 10), Err(IdxError::Dimensions { expected: 3, found: 2 })));
        let img = parse_idx(&encode_idx(&[1, 1, 1], &[0])[..]).unwrap();
        let lbl = parse_idx(&encode_idx(&[2], &[0, 1])[..]).unwrap();
        assert!(matches!(to_dataset(&img, &lbl, 10), Err(IdxError::CountMismatch { .. })));
        let lbl = parse_idx(&encode_idx(&[1], &[12])[..]).unwrap();
        assert!(matches!(to_dataset(&img, &lbl, 10), Err(IdxError::Label(12))));
    }
}
