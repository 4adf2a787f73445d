//! IDX files (the MNIST byte layout): big-endian magic `0x0000 TT RR` where
//! `TT` is the element type and `RR` the rank, then `RR` u32 dimensions and
//! the raw elements. Only unsigned bytes (`TT = 0x08`) are supported.

use crate::error::{Error, Result};
use crate::nncore::{Dataset, Tensor};
use std::path::Path;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl IdxArray {
    pub fn from_bytes(bytes: &[u8]) -> Result<IdxArray> {
        if bytes.len() < 4 {
            return Err(Error::Idx(format!("file too short for a header ({} bytes)", bytes.len())));
        }
        if bytes[0] != 0 || bytes[1] != 0 {
            return Err(Error::Idx(format!("bad magic {:02x?}", &bytes[..4])));
        }
        if bytes[2] != 0x08 {
            return Err(Error::Idx(format!("unsupported element type 0x{:02x}", bytes[2])));
        }
        let rank = bytes[3] as usize;
        if rank == 0 {
            return Err(Error::Idx("rank 0".into()));
        }
        let header = 4 + 4 * rank;
        if bytes.len() < header {
            return Err(Error::Idx("truncated dimension list".into()));
        }
        let dims: Vec<usize> = bytes[4..header]
            .chunks_exact(4)
            .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
            .collect();
        let n: usize = dims.iter().product();
        if bytes.len() != header + n {
            return Err(Error::Idx(format!(
                "expected {n} data bytes for dims {dims:?}, found {}",
                bytes.len() - header
            )));
        }
        Ok(IdxArray {
            dims,
            data: bytes[header..].to_vec(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![0, 0, 0x08, self.dims.len() as u8];
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_be_bytes());
        }
        out.extend_from_slice(&self.data);
        out
    }

    pub fn read(path: &Path) -> Result<IdxArray> {
        let bytes = std::fs::read(path).map_err(|e| Error::Idx(format!("{}: {e}", path.display())))?;
        IdxArray::from_bytes(&bytes)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    fn magic(&self) -> u32 {
        0x0800 | self.dims.len() as u32
    }
}

/// Reads an `N×H×W` image file, scaled to `[0, 1]` as `[N, 1, H, W]`.
pub fn read_images(path: &Path) -> Result<Tensor<f32>> {
    let arr = IdxArray::read(path)?;
    if arr.magic() != IMAGES_MAGIC {
        return Err(Error::Idx(format!("{}: expected a rank-3 image file", path.display())));
    }
    let (n, h, w) = (arr.dims[0], arr.dims[1], arr.dims[2]);
    Tensor::new(vec![n, 1, h, w], arr.data.iter().map(|&b| b as f32 / 255.0).collect())
}

pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let arr = IdxArray::read(path)?;
    if arr.magic() != LABELS_MAGIC {
        return Err(Error::Idx(format!("{}: expected a rank-1 label file", path.display())));
    }
    Ok(arr.data.iter().map(|&b| b as usize).collect())
}

pub fn load_classification(images: &Path, labels: &Path) -> Result<Dataset> {
    let x = read_images(images)?;
    let y = read_labels(labels)?;
    if x.shape()[0] != y.len() {
        return Err(Error::Idx(format!("{} images but {} labels", x.shape()[0], y.len())));
    }
    Dataset::new(x, y)
}

/// Writes `[N, 1, H, W]` images in `[0, 1]` and their labels.
pub fn write_classification(data: &Dataset, images: &Path, labels: &Path) -> Result<()> {
    let s = data.inputs.shape();
    if s.len() != 4 || s[1] != 1 || data.targets_per_sample() != 1 {
        return Err(Error::Idx(format!("cannot store shape {s:?} as IDX images")));
    }
    if data.targets.iter().any(|&t| t > 255) {
        return Err(Error::Idx("labels above 255".into()));
    }
    IdxArray {
        dims: vec![s[0], s[2], s[3]],
        data: data
            .inputs
            .data()
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect(),
    }
    .write(images)?;
    IdxArray {
        dims: vec![s[0]],
        data: data.targets.iter().map(|&t| t as u8).collect(),
    }
    .write(labels)
}
