//! IDX (MNIST-style) reader and writer: big-endian u32 header, u8 payload.

use std::path::Path;

use ecgan_tensor::Tensor;

use super::Dataset;
use crate::error::{DataError, Error, Result};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

struct Header {
    dims: Vec<usize>,
    payload: usize,
}

fn parse_header(bytes: &[u8], file: &str, magic: u32, rank: usize) -> std::result::Result<Header, DataError> {
    let header_len = 4 * (1 + rank);
    let word = |i: usize| u32::from_be_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
    if bytes.len() < 4 {
        return Err(DataError::Truncated {
            file: file.into(),
            offset: bytes.len() as u64,
            needed: (4 - bytes.len()) as u64,
        });
    }
    if word(0) != magic {
        return Err(DataError::BadMagic { file: file.into(), expected: magic, found: word(0) });
    }
    if bytes.len() < header_len {
        return Err(DataError::Truncated {
            file: file.into(),
            offset: bytes.len() as u64,
            needed: (header_len - bytes.len()) as u64,
        });
    }
    let dims: Vec<usize> = (1..=rank).map(|i| word(i) as usize).collect();
    if let Some(i) = dims.iter().skip(1).position(|&d| d == 0) {
        return Err(DataError::InvalidHeader {
            file: file.into(),
            offset: 4 * (i as u64 + 2),
            reason: "zero image dimension".into(),
        });
    }
    let payload = dims.iter().product::<usize>();
    let have = bytes.len() - header_len;
    if have < payload {
        return Err(DataError::Truncated {
            file: file.into(),
            offset: bytes.len() as u64,
            needed: (payload - have) as u64,
        });
    }
    if have > payload {
        return Err(DataError::TrailingBytes {
            file: file.into(),
            offset: (header_len + payload) as u64,
            extra: (have - payload) as u64,
        });
    }
    Ok(Header { dims, payload: header_len })
}

/// `[N,1,rows,cols]` in `[0,1]`.
pub fn read_idx_images(path: &Path) -> Result<Tensor> {
    let bytes = read(path)?;
    let h = parse_header(&bytes, &path.display().to_string(), IMAGE_MAGIC, 3)?;
    let data = bytes[h.payload..].iter().map(|&b| f32::from(b) / 255.0).collect();
    Ok(Tensor::new(vec![h.dims[0], 1, h.dims[1], h.dims[2]], data)?)
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<usize>> {
    let bytes = read(path)?;
    let h = parse_header(&bytes, &path.display().to_string(), LABEL_MAGIC, 1)?;
    Ok(bytes[h.payload..].iter().map(|&b| usize::from(b)).collect())
}

/// Paired image and label files; `K` is the largest label plus one.
pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let x = read_idx_images(images)?;
    let y = read_idx_labels(labels)?;
    if x.shape()[0] != y.len() {
        return Err(DataError::CountMismatch { images: x.shape()[0], labels: y.len() }.into());
    }
    if y.is_empty() {
        return Err(DataError::Empty.into());
    }
    let k = y.iter().max().map_or(0, |m| m + 1).max(2);
    Dataset::new(x, y, k)
}

pub fn write_idx_images(path: &Path, rows: usize, cols: usize, pixels: &[u8]) -> Result<()> {
    assert_eq!(pixels.len() % (rows * cols), 0, "pixel count must be a multiple of rows·cols");
    let n = pixels.len() / (rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for word in [IMAGE_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&word.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    std::fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    std::fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
