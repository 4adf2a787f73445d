use crate::error::{Error, Result};
use num_traits::{Float, FromPrimitive};
use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

/// Element type of the training core. Models train in `f32`; gradient checks
/// cast to `f64`.
pub trait Scalar:
    Float + FromPrimitive + Default + Debug + Send + Sync + Sum + AddAssign + SubAssign + MulAssign + 'static
{
    fn lit(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("representable")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} holds {n} elements, data has {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![T::zero(); n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from(*v).expect("finite cast"))
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Rows `indices` of the leading axis, stacked.
    pub fn gather_rows(&self, indices: &[usize]) -> Tensor<T> {
        let row: usize = self.shape[1..].iter().product();
        let mut data = Vec::with_capacity(row * indices.len());
        for &i in indices {
            data.extend_from_slice(&self.data[i * row..(i + 1) * row]);
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Tensor { shape, data }
    }
}

/// Splits a per-sample shape around its class axis: `(outer, classes, inner)`
/// per sample. Rank-3 samples are channel-first maps, everything else puts
/// classes last.
pub fn class_layout(sample_shape: &[usize]) -> (usize, usize, usize) {
    match sample_shape.len() {
        3 => (1, sample_shape[0], sample_shape[1] * sample_shape[2]),
        0 => (1, 1, 1),
        _ => {
            let classes = *sample_shape.last().unwrap();
            let outer = sample_shape[..sample_shape.len() - 1].iter().product();
            (outer, classes, 1)
        }
    }
}

/// Number of classified positions per sample (pixels, frames, or 1).
pub fn positions_per_sample(sample_shape: &[usize]) -> usize {
    let (outer, _, inner) = class_layout(sample_shape);
    outer * inner
}

/// Argmax over the class axis for every position of a batch of outputs.
pub fn argmax_positions<T: Scalar>(output: &Tensor<T>) -> Vec<usize> {
    let sample_shape = &output.shape()[1..];
    let (outer, classes, inner) = class_layout(sample_shape);
    let batch = output.shape()[0];
    let data = output.data();
    let mut out = Vec::with_capacity(batch * outer * inner);
    for b in 0..batch {
        for o in 0..outer {
            let base = (b * outer + o) * classes * inner;
            for i in 0..inner {
                let mut best = 0;
                let mut best_v = data[base + i];
                for k in 1..classes {
                    let v = data[base + k * inner + i];
                    if v > best_v {
                        best_v = v;
                        best = k;
                    }
                }
                out.push(best);
            }
        }
    }
    out
}
