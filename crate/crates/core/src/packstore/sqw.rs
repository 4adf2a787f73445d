//! SQW container: bit-packed quantized tensors next to plain float32 ones.
//!
//! ```text
//! "SQW1"  u16 version=1  u16 tensor_count
//! per tensor:
//!   u16 name_len, name (UTF-8)
//!   u8 dtype (0 = float32, 1 = packed)  u8 rank  u32 dims[rank]
//!   packed:  u8 bit_width  i16 n1  i16 n2  payload[ceil(b·N / 8)]
//!   float32: N × f32
//! ```
//!
//! Integers and floats are little-endian. Codes are packed LSB-first in flat
//! index order; pad bits in the last byte are zero.

use crate::error::{Error, Result, SqwError};
use crate::inq::PartitionState;
use crate::nncore::ModelGraph;
use crate::quantlevels::{LevelSet, QuantCode};
use std::path::Path;

pub const MAGIC: [u8; 4] = *b"SQW1";
pub const VERSION: u16 = 1;
const DTYPE_F32: u8 = 0;
const DTYPE_PACKED: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    Float32(Vec<f32>),
    Packed { level_set: LevelSet, payload: Vec<u8> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PackedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: TensorData,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PackedModel {
    pub tensors: Vec<PackedTensor>,
}

pub fn payload_len(bit_width: u32, n: usize) -> usize {
    (bit_width as usize * n).div_ceil(8)
}

pub fn pack_codes(codes: &[QuantCode], bit_width: u32) -> Vec<u8> {
    let mut out = vec![0u8; payload_len(bit_width, codes.len())];
    let mut bit = 0usize;
    for c in codes {
        let mut v = c.to_bits(bit_width);
        let mut left = bit_width as usize;
        while left > 0 {
            let (byte, off) = (bit / 8, bit % 8);
            let take = left.min(8 - off);
            out[byte] |= ((v & ((1 << take) - 1)) as u8) << off;
            v >>= take;
            bit += take;
            left -= take;
        }
    }
    out
}

pub fn unpack_codes(payload: &[u8], n: usize, bit_width: u32) -> std::result::Result<Vec<QuantCode>, String> {
    if payload.len() != payload_len(bit_width, n) {
        return Err(format!(
            "payload is {} bytes, expected {}",
            payload.len(),
            payload_len(bit_width, n)
        ));
    }
    let mut codes = Vec::with_capacity(n);
    let mut bit = 0usize;
    for _ in 0..n {
        let mut v = 0u32;
        let mut got = 0usize;
        while got < bit_width as usize {
            let (byte, off) = (bit / 8, bit % 8);
            let take = (bit_width as usize - got).min(8 - off);
            let chunk = (payload[byte] as u32 >> off) & ((1 << take) - 1);
            v |= chunk << got;
            got += take;
            bit += take;
        }
        codes.push(QuantCode::from_bits(v, bit_width).ok_or_else(|| format!("invalid code {v:#b}"))?);
    }
    let pad = payload.len() * 8 - bit;
    if pad > 0 && payload[payload.len() - 1] >> (8 - pad) != 0 {
        return Err("nonzero pad bits".into());
    }
    Ok(codes)
}

impl PackedTensor {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_packed(&self) -> bool {
        matches!(self.data, TensorData::Packed { .. })
    }

    /// Stored bytes of the tensor body (payload or float data).
    pub fn body_bytes(&self) -> usize {
        match &self.data {
            TensorData::Float32(v) => 4 * v.len(),
            TensorData::Packed { payload, .. } => payload.len(),
        }
    }

    pub fn codes(&self) -> Result<Option<(LevelSet, Vec<QuantCode>)>> {
        match &self.data {
            TensorData::Float32(_) => Ok(None),
            TensorData::Packed { level_set, payload } => {
                let codes = unpack_codes(payload, self.numel(), level_set.bit_width()).map_err(|reason| {
                    SqwError::Malformed {
                        name: self.name.clone(),
                        reason,
                    }
                })?;
                Ok(Some((*level_set, codes)))
            }
        }
    }

    pub fn values(&self) -> Result<Vec<f32>> {
        match &self.data {
            TensorData::Float32(v) => Ok(v.clone()),
            TensorData::Packed { .. } => {
                let (ls, codes) = self.codes()?.unwrap();
                codes.into_iter().map(|c| ls.decode(c)).collect()
            }
        }
    }
}

/// Packs every parameter of `model`. Tensors fully quantized in `state` are
/// stored as codes; everything else (biases, still-free weights) as float32.
pub fn pack_model(model: &ModelGraph<f32>, state: Option<&PartitionState>) -> Result<PackedModel> {
    let mut tensors = Vec::with_capacity(model.num_params());
    for (id, (name, p)) in model.params().enumerate() {
        let part = state.and_then(|s| s.for_param(id)).filter(|t| t.is_fully_quantized());
        let data = match part {
            Some(t) => {
                // codes must still describe the weights exactly
                for (c, w) in t.codes.iter().zip(p.value.data()) {
                    if t.level_set.decode(*c)?.to_bits() != w.to_bits() {
                        return Err(Error::Partition(format!("{name}: weight {w} does not match its code")));
                    }
                }
                TensorData::Packed {
                    level_set: t.level_set,
                    payload: pack_codes(&t.codes, t.level_set.bit_width()),
                }
            }
            None => TensorData::Float32(p.value.data().to_vec()),
        };
        tensors.push(PackedTensor {
            name,
            shape: p.value.shape().to_vec(),
            data,
        });
    }
    Ok(PackedModel { tensors })
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], SqwError> {
        if self.buf.len() - self.pos < n {
            return Err(SqwError::Truncated {
                offset: self.pos,
                needed: n,
                available: self.buf.len() - self.pos,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> std::result::Result<u8, SqwError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> std::result::Result<u16, SqwError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn i16(&mut self) -> std::result::Result<i16, SqwError> {
        Ok(i16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> std::result::Result<u32, SqwError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

impl PackedModel {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let count = u16::try_from(self.tensors.len())
            .map_err(|_| Error::Config(format!("{} tensors exceed the u16 count", self.tensors.len())))?;
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&count.to_le_bytes());
        for t in &self.tensors {
            let name = t.name.as_bytes();
            let name_len = u16::try_from(name.len())
                .map_err(|_| Error::Config(format!("tensor name too long: {}", t.name)))?;
            let rank = u8::try_from(t.shape.len())
                .map_err(|_| Error::Config(format!("{}: rank too large", t.name)))?;
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name);
            match &t.data {
                TensorData::Float32(_) => out.push(DTYPE_F32),
                TensorData::Packed { .. } => out.push(DTYPE_PACKED),
            }
            out.push(rank);
            for &d in &t.shape {
                let d = u32::try_from(d).map_err(|_| Error::Config(format!("{}: dimension too large", t.name)))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            match &t.data {
                TensorData::Float32(v) => {
                    if v.len() != t.numel() {
                        return Err(Error::Shape(format!("{}: {} values for shape {:?}", t.name, v.len(), t.shape)));
                    }
                    for x in v {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
                TensorData::Packed { level_set, payload } => {
                    if payload.len() != payload_len(level_set.bit_width(), t.numel()) {
                        return Err(Error::Shape(format!("{}: payload length mismatch", t.name)));
                    }
                    let exp = |e: i32| {
                        i16::try_from(e).map_err(|_| Error::Config(format!("{}: exponent {e} does not fit in i16", t.name)))
                    };
                    out.push(level_set.bit_width() as u8);
                    out.extend_from_slice(&exp(level_set.n1())?.to_le_bytes());
                    out.extend_from_slice(&exp(level_set.n2())?.to_le_bytes());
                    out.extend_from_slice(payload);
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<PackedModel> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
        if magic != MAGIC {
            return Err(SqwError::BadMagic(magic).into());
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(SqwError::UnsupportedVersion(version).into());
        }
        let count = r.u16()?;
        let mut tensors = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| SqwError::BadName)?
                .to_string();
            let dtype = r.u8()?;
            let rank = r.u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let numel: usize = shape.iter().product();
            let data = match dtype {
                DTYPE_F32 => {
                    let raw = r.take(numel.checked_mul(4).ok_or(SqwError::Malformed {
                        name: name.clone(),
                        reason: "size overflow".into(),
                    })?)?;
                    TensorData::Float32(
                        raw.chunks_exact(4)
                            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                            .collect(),
                    )
                }
                DTYPE_PACKED => {
                    let b = r.u8()? as u32;
                    let n1 = r.i16()? as i32;
                    let n2 = r.i16()? as i32;
                    let level_set = LevelSet::from_bounds(b, n1, n2).map_err(|e| SqwError::Malformed {
                        name: name.clone(),
                        reason: e.to_string(),
                    })?;
                    let payload = r.take(payload_len(b, numel))?.to_vec();
                    unpack_codes(&payload, numel, b).map_err(|reason| SqwError::Malformed {
                        name: name.clone(),
                        reason,
                    })?;
                    TensorData::Packed { level_set, payload }
                }
                other => return Err(SqwError::UnknownDtype(other).into()),
            };
            tensors.push(PackedTensor { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(SqwError::TrailingBytes(bytes.len() - r.pos).into());
        }
        Ok(PackedModel { tensors })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<PackedModel> {
        PackedModel::from_bytes(&std::fs::read(path)?)
    }

    /// Copies the decoded tensors into a model of matching architecture.
    pub fn load_into(&self, model: &mut ModelGraph<f32>) -> Result<()> {
        let names: Vec<String> = model.params().map(|(n, _)| n).collect();
        if names.len() != self.tensors.len() {
            return Err(Error::Shape(format!(
                "model has {} parameter tensors, file has {}",
                names.len(),
                self.tensors.len()
            )));
        }
        for (id, (t, name)) in self.tensors.iter().zip(&names).enumerate() {
            let p = model.param_mut(id);
            if &t.name != name || t.shape != p.value.shape() {
                return Err(Error::Shape(format!(
                    "file tensor {} {:?} does not match model parameter {name} {:?}",
                    t.name,
                    t.shape,
                    p.value.shape()
                )));
            }
            p.value.data_mut().copy_from_slice(&t.values()?);
        }
        Ok(())
    }
}
