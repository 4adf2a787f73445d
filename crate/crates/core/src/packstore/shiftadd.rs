//! Multiplier-free inference over packed power-of-two weights.
//!
//! Each weight is `0` or `±2^p`. A contribution is the activation scaled by
//! the exact constant `2^p`, then added or subtracted; zero codes are skipped.
//! Loops visit weights in the same order as the float kernels in
//! `nncore::layers`, and accumulators start at `+0.0` with the bias added
//! last, so skipping a zero never changes a bit: an accumulator that starts
//! at `+0.0` can never become `-0.0`, and adding `±0.0` to anything else is
//! the identity.

use super::sqw::PackedModel;
use crate::error::{Error, Result};
use crate::nncore::layers::ConvGeom;
use crate::nncore::{Layer, LayerSpec, ModelGraph, ParamKind, Tensor};
use crate::quantlevels::pow2_f32;

/// Decoded power-of-two weight; `scale == 0.0` marks a zero code.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pow2Weight {
    pub scale: f32,
    pub negative: bool,
}

impl Pow2Weight {
    pub const ZERO: Pow2Weight = Pow2Weight {
        scale: 0.0,
        negative: false,
    };

    #[inline(always)]
    fn is_zero(self) -> bool {
        self.scale == 0.0
    }

    /// `acc ± x·2^p`.
    #[inline(always)]
    fn accumulate(self, acc: f32, x: f32) -> f32 {
        let s = x * self.scale;
        if self.negative {
            acc - s
        } else {
            acc + s
        }
    }
}

#[derive(Debug, Clone)]
enum ShiftLayer {
    Dense {
        inp: usize,
        units: usize,
        weights: Vec<Pow2Weight>,
        bias: Vec<f32>,
    },
    Conv {
        input_shape: Vec<usize>,
        filters: usize,
        kernel: usize,
        weights: Vec<Pow2Weight>,
        bias: Vec<f32>,
    },
    BiRnn {
        steps: usize,
        features: usize,
        hidden: usize,
        /// fwd.wx, fwd.wh, bwd.wx, bwd.wh
        weights: [Vec<Pow2Weight>; 4],
        /// fwd.bias, bwd.bias
        bias: [Vec<f32>; 2],
    },
    Plain(Layer<f32>),
}

#[derive(Debug, Clone)]
pub struct ShiftAddModel {
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    layers: Vec<ShiftLayer>,
    zero_codes: usize,
    total_codes: usize,
}

impl ShiftAddModel {
    /// Pairs an architecture with packed parameters. Every weight tensor must
    /// be packed; float32 weights are rejected.
    pub fn new(input_shape: &[usize], specs: &[LayerSpec], packed: &PackedModel) -> Result<Self> {
        let skeleton = ModelGraph::<f32>::zeros(input_shape, specs, 0)?;
        if skeleton.num_params() != packed.tensors.len() {
            return Err(Error::Shape(format!(
                "architecture has {} parameter tensors, packed model {}",
                skeleton.num_params(),
                packed.tensors.len()
            )));
        }
        let mut tensors = packed.tensors.iter();
        let mut layers = Vec::with_capacity(specs.len());
        let (mut zero_codes, mut total_codes) = (0, 0);
        for (li, layer) in skeleton.layers().iter().enumerate() {
            let mut weights = Vec::new();
            let mut biases = Vec::new();
            for p in &layer.params {
                let t = tensors.next().unwrap();
                let expected = format!("{li}.{}", p.name);
                if t.name != expected || t.shape != p.value.shape() {
                    return Err(Error::Shape(format!(
                        "packed tensor {} {:?} does not match {expected} {:?}",
                        t.name,
                        t.shape,
                        p.value.shape()
                    )));
                }
                match p.kind {
                    ParamKind::Bias => biases.push(t.values()?),
                    ParamKind::Weight => {
                        let (ls, codes) = t
                            .codes()?
                            .ok_or_else(|| Error::RequiresQuantizedModel(format!("{} is stored as float32", t.name)))?;
                        let mut decoded = Vec::with_capacity(codes.len());
                        for c in codes {
                            total_codes += 1;
                            if c.is_zero() {
                                zero_codes += 1;
                                decoded.push(Pow2Weight::ZERO);
                            } else {
                                let p = ls.exponent_of(c)?;
                                let scale = pow2_f32(p).ok_or_else(|| {
                                    Error::InvalidLevelSet(format!("2^{p} not representable in {}", t.name))
                                })?;
                                decoded.push(Pow2Weight {
                                    scale,
                                    negative: c.negative,
                                });
                            }
                        }
                        weights.push(decoded);
                    }
                }
            }
            let shift = match layer.spec {
                LayerSpec::Dense { units } => ShiftLayer::Dense {
                    inp: *layer.input_shape.last().unwrap(),
                    units,
                    weights: weights.pop().unwrap(),
                    bias: biases.pop().unwrap(),
                },
                LayerSpec::Conv2d { filters, kernel } => ShiftLayer::Conv {
                    input_shape: layer.input_shape.clone(),
                    filters,
                    kernel,
                    weights: weights.pop().unwrap(),
                    bias: biases.pop().unwrap(),
                },
                LayerSpec::BiRnn { hidden } => {
                    let mut w = weights.into_iter();
                    let mut b = biases.into_iter();
                    ShiftLayer::BiRnn {
                        steps: layer.input_shape[0],
                        features: layer.input_shape[1],
                        hidden,
                        weights: [w.next().unwrap(), w.next().unwrap(), w.next().unwrap(), w.next().unwrap()],
                        bias: [b.next().unwrap(), b.next().unwrap()],
                    }
                }
                _ => ShiftLayer::Plain(layer.clone()),
            };
            layers.push(shift);
        }
        Ok(ShiftAddModel {
            input_shape: input_shape.to_vec(),
            output_shape: skeleton.output_shape().to_vec(),
            layers,
            zero_codes,
            total_codes,
        })
    }

    pub fn from_template(template: &ModelGraph<f32>, packed: &PackedModel) -> Result<Self> {
        Self::new(template.input_shape(), &template.specs(), packed)
    }

    /// Fraction of weight codes that are zero and therefore skipped.
    pub fn skip_rate(&self) -> f64 {
        if self.total_codes == 0 {
            0.0
        } else {
            self.zero_codes as f64 / self.total_codes as f64
        }
    }

    pub fn forward(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        if x.shape().is_empty() || x.shape()[1..] != self.input_shape[..] {
            return Err(Error::Shape(format!(
                "expected [batch, {:?}], got {:?}",
                self.input_shape,
                x.shape()
            )));
        }
        let batch = x.shape()[0];
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = match layer {
                ShiftLayer::Plain(l) => l.forward(&cur)?,
                ShiftLayer::Dense { inp, units, weights, bias } => {
                    let rows = cur.len() / inp;
                    let mut shape = cur.shape().to_vec();
                    *shape.last_mut().unwrap() = *units;
                    Tensor::new(shape, dense(cur.data(), rows, *inp, weights, bias, *units))?
                }
                ShiftLayer::Conv {
                    input_shape,
                    filters,
                    kernel,
                    weights,
                    bias,
                } => {
                    let g = ConvGeom::new(batch, input_shape, *filters, *kernel);
                    let out = conv2d(cur.data(), &g, weights, bias);
                    Tensor::new(vec![batch, *filters, g.out_h, g.out_w], out)?
                }
                ShiftLayer::BiRnn {
                    steps,
                    features,
                    hidden,
                    weights,
                    bias,
                } => {
                    let out = birnn(cur.data(), batch, *steps, *features, *hidden, weights, bias);
                    Tensor::new(vec![batch, *steps, 2 * hidden], out)?
                }
            };
        }
        debug_assert_eq!(&cur.shape()[1..], &self.output_shape[..]);
        Ok(cur)
    }
}

fn dense(x: &[f32], rows: usize, inp: usize, w: &[Pow2Weight], b: &[f32], units: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(rows * units);
    for r in 0..rows {
        let xr = &x[r * inp..(r + 1) * inp];
        for u in 0..units {
            let wr = &w[u * inp..(u + 1) * inp];
            let mut acc = 0.0f32;
            for (xv, wv) in xr.iter().zip(wr) {
                if !wv.is_zero() {
                    acc = wv.accumulate(acc, *xv);
                }
            }
            out.push(acc + b[u]);
        }
    }
    out
}

fn conv2d(x: &[f32], g: &ConvGeom, w: &[Pow2Weight], b: &[f32]) -> Vec<f32> {
    let plane_in = g.height * g.width;
    let plane_out = g.out_h * g.out_w;
    let kk = g.kernel * g.kernel;
    let mut out = vec![0.0f32; g.batch * g.filters * plane_out];
    for n in 0..g.batch {
        for f in 0..g.filters {
            let acc = &mut out[(n * g.filters + f) * plane_out..][..plane_out];
            for c in 0..g.channels {
                let xin = &x[(n * g.channels + c) * plane_in..][..plane_in];
                let wk = &w[(f * g.channels + c) * kk..][..kk];
                for ki in 0..g.kernel {
                    for kj in 0..g.kernel {
                        let wv = wk[ki * g.kernel + kj];
                        if wv.is_zero() {
                            continue;
                        }
                        for oy in 0..g.out_h {
                            let src = &xin[(oy + ki) * g.width + kj..][..g.out_w];
                            let dst = &mut acc[oy * g.out_w..][..g.out_w];
                            if wv.negative {
                                for (d, &s) in dst.iter_mut().zip(src) {
                                    *d -= s * wv.scale;
                                }
                            } else {
                                for (d, &s) in dst.iter_mut().zip(src) {
                                    *d += s * wv.scale;
                                }
                            }
                        }
                    }
                }
            }
            let bias = b[f];
            for v in acc.iter_mut() {
                *v += bias;
            }
        }
    }
    out
}

fn rnn_cell(x: &[f32], h_prev: &[f32], wx: &[Pow2Weight], wh: &[Pow2Weight], b: &[f32], out: &mut [f32]) {
    let f = x.len();
    let hidden = out.len();
    for j in 0..hidden {
        let mut acc = 0.0f32;
        for (wv, xv) in wx[j * f..][..f].iter().zip(x) {
            if !wv.is_zero() {
                acc = wv.accumulate(acc, *xv);
            }
        }
        for (wv, hv) in wh[j * hidden..][..hidden].iter().zip(h_prev) {
            if !wv.is_zero() {
                acc = wv.accumulate(acc, *hv);
            }
        }
        out[j] = (acc + b[j]).tanh();
    }
}

fn birnn(
    x: &[f32],
    batch: usize,
    steps: usize,
    f: usize,
    hidden: usize,
    w: &[Vec<Pow2Weight>; 4],
    b: &[Vec<f32>; 2],
) -> Vec<f32> {
    let width = 2 * hidden;
    let mut out = vec![0.0f32; batch * steps * width];
    let zero = vec![0.0f32; hidden];
    let mut h = vec![0.0f32; hidden];
    for n in 0..batch {
        let xs = &x[n * steps * f..][..steps * f];
        let ys = &mut out[n * steps * width..][..steps * width];
        for t in 0..steps {
            let prev = if t == 0 { zero.clone() } else { ys[(t - 1) * width..][..hidden].to_vec() };
            rnn_cell(&xs[t * f..][..f], &prev, &w[0], &w[1], &b[0], &mut h);
            ys[t * width..][..hidden].copy_from_slice(&h);
        }
        for t in (0..steps).rev() {
            let prev = if t + 1 == steps {
                zero.clone()
            } else {
                ys[(t + 1) * width + hidden..][..hidden].to_vec()
            };
            rnn_cell(&xs[t * f..][..f], &prev, &w[2], &w[3], &b[1], &mut h);
            ys[t * width + hidden..][..hidden].copy_from_slice(&h);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponent_scaling_is_exact() {
        let w = Pow2Weight { scale: 8.0, negative: false };
        assert_eq!(w.accumulate(0.0, 5.0), 40.0);
        let w = Pow2Weight { scale: 8.0, negative: true };
        assert_eq!(w.accumulate(0.0, 5.0), -40.0);
    }

    #[test]
    fn zero_code_contributes_nothing() {
        let y = dense(&[123.0, 1.0], 1, 2, &[Pow2Weight::ZERO, Pow2Weight { scale: 0.5, negative: false }], &[0.0], 1);
        assert_eq!(y, vec![0.5]);
    }
}
