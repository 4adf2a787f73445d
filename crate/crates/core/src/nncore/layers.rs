//! Layer kinds with hand-written forward and backward passes.
//!
//! All shapes below exclude the batch axis. Convolutions are stride 1 with
//! valid padding; use [`LayerSpec::Pad2d`] for "same"-style maps.
//!
//! Parametric kernels accumulate products into a zero-initialised sum and
//! add the bias last. The shift-add kernels in `packstore` rely on this
//! order to reproduce the outputs bit for bit.

use super::tensor::{class_layout, Scalar, Tensor};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Affine map over the last axis; leading axes are treated as rows
    /// (time-distributed on sequences).
    Dense { units: usize },
    /// `[C, H, W] -> [filters, H-k+1, W-k+1]`.
    Conv2d { filters: usize, kernel: usize },
    /// Zero padding on all four spatial borders.
    Pad2d { pad: usize },
    Relu,
    /// Non-overlapping 2x2 max pooling, odd trailing rows/columns dropped.
    #[serde(rename = "maxpool2x2")]
    MaxPool2x2,
    /// Nearest-neighbour 2x upsampling.
    #[serde(rename = "upsample2x")]
    Upsample2x,
    Flatten,
    /// Vanilla tanh RNN run in both directions; `[T, F] -> [T, 2·hidden]`.
    #[serde(rename = "birnn")]
    BiRnn { hidden: usize },
    /// Softmax over the class axis (last axis, or channels for `[C, H, W]`).
    SoftmaxOutput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    Weight,
    Bias,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T = f32> {
    pub name: &'static str,
    pub kind: ParamKind,
    pub fan_in: usize,
    pub value: Tensor<T>,
}

impl Param<f32> {
    pub fn is_quantizable(&self) -> bool {
        self.kind == ParamKind::Weight
    }
}

fn shape_err(spec: &LayerSpec, input: &[usize], what: &str) -> Error {
    Error::Shape(format!("{spec:?} cannot take input {input:?}: {what}"))
}

impl LayerSpec {
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *self {
            LayerSpec::Dense { units } => {
                if input.is_empty() || units == 0 {
                    return Err(shape_err(self, input, "needs rank >= 1 and units > 0"));
                }
                let mut out = input.to_vec();
                *out.last_mut().unwrap() = units;
                Ok(out)
            }
            LayerSpec::Conv2d { filters, kernel } => {
                if input.len() != 3 || kernel == 0 || filters == 0 {
                    return Err(shape_err(self, input, "needs [C, H, W]"));
                }
                if input[1] < kernel || input[2] < kernel {
                    return Err(shape_err(self, input, "kernel larger than map"));
                }
                Ok(vec![filters, input[1] - kernel + 1, input[2] - kernel + 1])
            }
            LayerSpec::Pad2d { pad } => {
                if input.len() != 3 {
                    return Err(shape_err(self, input, "needs [C, H, W]"));
                }
                Ok(vec![input[0], input[1] + 2 * pad, input[2] + 2 * pad])
            }
            LayerSpec::Relu | LayerSpec::SoftmaxOutput => {
                if input.is_empty() {
                    return Err(shape_err(self, input, "needs rank >= 1"));
                }
                Ok(input.to_vec())
            }
            LayerSpec::MaxPool2x2 => {
                if input.len() != 3 || input[1] < 2 || input[2] < 2 {
                    return Err(shape_err(self, input, "needs [C, H>=2, W>=2]"));
                }
                Ok(vec![input[0], input[1] / 2, input[2] / 2])
            }
            LayerSpec::Upsample2x => {
                if input.len() != 3 {
                    return Err(shape_err(self, input, "needs [C, H, W]"));
                }
                Ok(vec![input[0], input[1] * 2, input[2] * 2])
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::BiRnn { hidden } => {
                if input.len() != 2 || hidden == 0 {
                    return Err(shape_err(self, input, "needs [T, F]"));
                }
                Ok(vec![input[0], 2 * hidden])
            }
        }
    }

    /// `(name, kind, shape, fan_in)` for each parameter tensor.
    pub fn param_layout(&self, input: &[usize]) -> Vec<(&'static str, ParamKind, Vec<usize>, usize)> {
        use ParamKind::*;
        match *self {
            LayerSpec::Dense { units } => {
                let fan_in = *input.last().unwrap();
                vec![
                    ("weight", Weight, vec![units, fan_in], fan_in),
                    ("bias", Bias, vec![units], fan_in),
                ]
            }
            LayerSpec::Conv2d { filters, kernel } => {
                let fan_in = input[0] * kernel * kernel;
                vec![
                    ("weight", Weight, vec![filters, input[0], kernel, kernel], fan_in),
                    ("bias", Bias, vec![filters], fan_in),
                ]
            }
            LayerSpec::BiRnn { hidden } => {
                let f = input[1];
                let fan_in = f + hidden;
                vec![
                    ("fwd.wx", Weight, vec![hidden, f], fan_in),
                    ("fwd.wh", Weight, vec![hidden, hidden], fan_in),
                    ("fwd.bias", Bias, vec![hidden], fan_in),
                    ("bwd.wx", Weight, vec![hidden, f], fan_in),
                    ("bwd.wh", Weight, vec![hidden, hidden], fan_in),
                    ("bwd.bias", Bias, vec![hidden], fan_in),
                ]
            }
            _ => Vec::new(),
        }
    }

    /// Half-width of the uniform initialisation range for a weight tensor.
    pub fn init_bound(&self, fan_in: usize) -> f64 {
        match self {
            // tanh recurrences: Glorot-like, keeps the recurrent gain near 1
            LayerSpec::BiRnn { .. } => (3.0 / fan_in as f64).sqrt(),
            _ => (6.0 / fan_in as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T = f32> {
    pub spec: LayerSpec,
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
    pub params: Vec<Param<T>>,
}

impl<T: Scalar> Layer<T> {
    /// Builds a layer with zero-filled parameters.
    pub fn zeros(spec: LayerSpec, input_shape: &[usize]) -> Result<Self> {
        let output_shape = spec.output_shape(input_shape)?;
        let params = spec
            .param_layout(input_shape)
            .into_iter()
            .map(|(name, kind, shape, fan_in)| Param {
                name,
                kind,
                fan_in,
                value: Tensor::zeros(shape),
            })
            .collect();
        Ok(Layer {
            spec,
            input_shape: input_shape.to_vec(),
            output_shape,
            params,
        })
    }

    pub fn cast<U: Scalar>(&self) -> Layer<U> {
        Layer {
            spec: self.spec.clone(),
            input_shape: self.input_shape.clone(),
            output_shape: self.output_shape.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name,
                    kind: p.kind,
                    fan_in: p.fan_in,
                    value: p.value.cast(),
                })
                .collect(),
        }
    }

    fn batch_of(&self, x: &Tensor<T>) -> Result<usize> {
        if x.shape().is_empty() || x.shape()[1..] != self.input_shape[..] {
            return Err(Error::Shape(format!(
                "{:?} expects [batch, {:?}], got {:?}",
                self.spec,
                self.input_shape,
                x.shape()
            )));
        }
        Ok(x.shape()[0])
    }

    fn out_tensor(&self, batch: usize, data: Vec<T>) -> Tensor<T> {
        let mut shape = vec![batch];
        shape.extend_from_slice(&self.output_shape);
        Tensor::new(shape, data).expect("kernel produced output of the declared shape")
    }

    fn in_tensor(&self, batch: usize, data: Vec<T>) -> Tensor<T> {
        let mut shape = vec![batch];
        shape.extend_from_slice(&self.input_shape);
        Tensor::new(shape, data).expect("kernel produced gradient of the input shape")
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let batch = self.batch_of(x)?;
        let xs = x.data();
        let out = match self.spec {
            LayerSpec::Dense { units } => {
                let inp = *self.input_shape.last().unwrap();
                let rows = xs.len() / inp;
                dense_forward(xs, rows, inp, self.params[0].value.data(), self.params[1].value.data(), units)
            }
            LayerSpec::Conv2d { filters, kernel } => {
                let g = ConvGeom::new(batch, &self.input_shape, filters, kernel);
                conv2d_forward(xs, &g, self.params[0].value.data(), self.params[1].value.data())
            }
            LayerSpec::Pad2d { pad } => pad2d(xs, batch, &self.input_shape, pad),
            LayerSpec::Relu => xs.iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect(),
            LayerSpec::MaxPool2x2 => {
                let (out, _) = maxpool_forward(xs, batch, &self.input_shape);
                out
            }
            LayerSpec::Upsample2x => upsample_forward(xs, batch, &self.input_shape),
            LayerSpec::Flatten => xs.to_vec(),
            LayerSpec::BiRnn { hidden } => {
                let p: Vec<&[T]> = self.params.iter().map(|p| p.value.data()).collect();
                birnn_forward(xs, batch, self.input_shape[0], self.input_shape[1], hidden, &p)
            }
            LayerSpec::SoftmaxOutput => softmax_forward(xs, batch, &self.input_shape),
        };
        Ok(self.out_tensor(batch, out))
    }

    /// Gradients of a scalar loss given `dy = dL/dy`, where `y = forward(x)`.
    /// Returns `dL/dx` and one gradient per parameter, in parameter order.
    pub fn backward(&self, x: &Tensor<T>, y: &Tensor<T>, dy: &Tensor<T>) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        let batch = self.batch_of(x)?;
        if dy.shape() != y.shape() || y.shape()[1..] != self.output_shape[..] {
            return Err(Error::Shape(format!(
                "{:?} backward: output {:?} / gradient {:?} mismatch",
                self.spec,
                y.shape(),
                dy.shape()
            )));
        }
        let (xs, ys, dys) = (x.data(), y.data(), dy.data());
        let (dx, grads) = match self.spec {
            LayerSpec::Dense { units } => {
                let inp = *self.input_shape.last().unwrap();
                let rows = xs.len() / inp;
                let (dx, dw, db) = dense_backward(xs, rows, inp, self.params[0].value.data(), units, dys);
                (dx, vec![dw, db])
            }
            LayerSpec::Conv2d { filters, kernel } => {
                let g = ConvGeom::new(batch, &self.input_shape, filters, kernel);
                let (dx, dw, db) = conv2d_backward(xs, &g, self.params[0].value.data(), dys);
                (dx, vec![dw, db])
            }
            LayerSpec::Pad2d { pad } => (unpad2d(dys, batch, &self.input_shape, pad), vec![]),
            LayerSpec::Relu => (
                xs.iter()
                    .zip(dys)
                    .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
                    .collect(),
                vec![],
            ),
            LayerSpec::MaxPool2x2 => {
                let (_, arg) = maxpool_forward(xs, batch, &self.input_shape);
                let mut dx = vec![T::zero(); xs.len()];
                for (o, &src) in arg.iter().enumerate() {
                    dx[src] += dys[o];
                }
                (dx, vec![])
            }
            LayerSpec::Upsample2x => (upsample_backward(dys, batch, &self.input_shape), vec![]),
            LayerSpec::Flatten => (dys.to_vec(), vec![]),
            LayerSpec::BiRnn { hidden } => {
                let p: Vec<&[T]> = self.params.iter().map(|p| p.value.data()).collect();
                birnn_backward(xs, ys, dys, batch, self.input_shape[0], self.input_shape[1], hidden, &p)
            }
            LayerSpec::SoftmaxOutput => (softmax_backward(ys, dys, batch, &self.input_shape), vec![]),
        };
        let dx = self.in_tensor(batch, dx);
        let grads = grads
            .into_iter()
            .zip(&self.params)
            .map(|(g, p)| Tensor::new(p.value.shape().to_vec(), g).expect("param grad shape"))
            .collect();
        Ok((dx, grads))
    }
}

pub(crate) fn dense_forward<T: Scalar>(x: &[T], rows: usize, inp: usize, w: &[T], b: &[T], units: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(rows * units);
    for r in 0..rows {
        let xr = &x[r * inp..(r + 1) * inp];
        for u in 0..units {
            let wr = &w[u * inp..(u + 1) * inp];
            let mut acc = T::zero();
            for i in 0..inp {
                acc += xr[i] * wr[i];
            }
            out.push(acc + b[u]);
        }
    }
    out
}

fn dense_backward<T: Scalar>(
    x: &[T],
    rows: usize,
    inp: usize,
    w: &[T],
    units: usize,
    dy: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut dx = vec![T::zero(); rows * inp];
    let mut dw = vec![T::zero(); units * inp];
    let mut db = vec![T::zero(); units];
    for r in 0..rows {
        let xr = &x[r * inp..(r + 1) * inp];
        let dxr = &mut dx[r * inp..(r + 1) * inp];
        for u in 0..units {
            let g = dy[r * units + u];
            if g == T::zero() {
                continue;
            }
            db[u] += g;
            let wr = &w[u * inp..(u + 1) * inp];
            let dwr = &mut dw[u * inp..(u + 1) * inp];
            for i in 0..inp {
                dxr[i] += g * wr[i];
                dwr[i] += g * xr[i];
            }
        }
    }
    (dx, dw, db)
}

/// Dimensions of a valid, stride-1 convolution over a batch.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub filters: usize,
    pub kernel: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(batch: usize, input_shape: &[usize], filters: usize, kernel: usize) -> Self {
        ConvGeom {
            batch,
            channels: input_shape[0],
            height: input_shape[1],
            width: input_shape[2],
            filters,
            kernel,
            out_h: input_shape[1] - kernel + 1,
            out_w: input_shape[2] - kernel + 1,
        }
    }
}

pub(crate) fn conv2d_forward<T: Scalar>(x: &[T], g: &ConvGeom, w: &[T], b: &[T]) -> Vec<T> {
    let plane_in = g.height * g.width;
    let plane_out = g.out_h * g.out_w;
    let kk = g.kernel * g.kernel;
    let mut out = vec![T::zero(); g.batch * g.filters * plane_out];
    for n in 0..g.batch {
        for f in 0..g.filters {
            let acc = &mut out[(n * g.filters + f) * plane_out..][..plane_out];
            for c in 0..g.channels {
                let xin = &x[(n * g.channels + c) * plane_in..][..plane_in];
                let wk = &w[(f * g.channels + c) * kk..][..kk];
                for ki in 0..g.kernel {
                    for kj in 0..g.kernel {
                        let wv = wk[ki * g.kernel + kj];
                        for oy in 0..g.out_h {
                            let src = &xin[(oy + ki) * g.width + kj..][..g.out_w];
                            let dst = &mut acc[oy * g.out_w..][..g.out_w];
                            for (d, &s) in dst.iter_mut().zip(src) {
                                *d += s * wv;
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

fn conv2d_backward<T: Scalar>(x: &[T], g: &ConvGeom, w: &[T], dy: &[T]) -> (Vec<T>, Vec<T>, Vec<T>) {
    let plane_in = g.height * g.width;
    let plane_out = g.out_h * g.out_w;
    let kk = g.kernel * g.kernel;
    let mut dx = vec![T::zero(); x.len()];
    let mut dw = vec![T::zero(); w.len()];
    let mut db = vec![T::zero(); g.filters];
    for n in 0..g.batch {
        for f in 0..g.filters {
            let gout = &dy[(n * g.filters + f) * plane_out..][..plane_out];
            db[f] += gout.iter().copied().sum::<T>();
            for c in 0..g.channels {
                let xin = &x[(n * g.channels + c) * plane_in..][..plane_in];
                let dxin = &mut dx[(n * g.channels + c) * plane_in..][..plane_in];
                let wk = &w[(f * g.channels + c) * kk..][..kk];
                let dwk = &mut dw[(f * g.channels + c) * kk..][..kk];
                for ki in 0..g.kernel {
                    for kj in 0..g.kernel {
                        let wv = wk[ki * g.kernel + kj];
                        let mut acc = T::zero();
                        for oy in 0..g.out_h {
                            let off = (oy + ki) * g.width + kj;
                            let grow = &gout[oy * g.out_w..][..g.out_w];
                            let src = &xin[off..][..g.out_w];
                            for (&gv, &s) in grow.iter().zip(src) {
                                acc += gv * s;
                            }
                            let dst = &mut dxin[off..][..g.out_w];
                            for (d, &gv) in dst.iter_mut().zip(grow) {
                                *d += gv * wv;
                            }
                        }
                        dwk[ki * g.kernel + kj] += acc;
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

fn pad2d<T: Scalar>(x: &[T], batch: usize, shape: &[usize], pad: usize) -> Vec<T> {
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut out = vec![T::zero(); batch * c * ph * pw];
    for plane in 0..batch * c {
        for y in 0..h {
            let src = &x[(plane * h + y) * w..][..w];
            out[(plane * ph + y + pad) * pw + pad..][..w].copy_from_slice(src);
        }
    }
    out
}

fn unpad2d<T: Scalar>(dy: &[T], batch: usize, shape: &[usize], pad: usize) -> Vec<T> {
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut out = Vec::with_capacity(batch * c * h * w);
    for plane in 0..batch * c {
        for y in 0..h {
            out.extend_from_slice(&dy[(plane * ph + y + pad) * pw + pad..][..w]);
        }
    }
    out
}

/// Pooled values and, for each output, the flat input index it came from.
/// The first maximum in row-major window order wins ties.
fn maxpool_forward<T: Scalar>(x: &[T], batch: usize, shape: &[usize]) -> (Vec<T>, Vec<usize>) {
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(batch * c * oh * ow);
    let mut arg = Vec::with_capacity(out.capacity());
    for plane in 0..batch * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}

fn upsample_forward<T: Scalar>(x: &[T], batch: usize, shape: &[usize]) -> Vec<T> {
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let mut out = Vec::with_capacity(batch * c * 4 * h * w);
    for plane in 0..batch * c {
        for y in 0..2 * h {
            let row = &x[(plane * h + y / 2) * w..][..w];
            for xx in 0..2 * w {
                out.push(row[xx / 2]);
            }
        }
    }
    out
}

fn upsample_backward<T: Scalar>(dy: &[T], batch: usize, shape: &[usize]) -> Vec<T> {
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let mut dx = vec![T::zero(); batch * c * h * w];
    for plane in 0..batch * c {
        for y in 0..2 * h {
            for xx in 0..2 * w {
                dx[(plane * h + y / 2) * w + xx / 2] += dy[(plane * 2 * h + y) * 2 * w + xx];
            }
        }
    }
    dx
}

/// One recurrent step: `tanh(Wx·x + Wh·h + b)`, products summed in that order.
pub(crate) fn rnn_cell<T: Scalar>(x: &[T], h_prev: &[T], wx: &[T], wh: &[T], b: &[T], out: &mut [T]) {
    let f = x.len();
    let hidden = out.len();
    for j in 0..hidden {
        let mut acc = T::zero();
        let wxr = &wx[j * f..][..f];
        for i in 0..f {
            acc += wxr[i] * x[i];
        }
        let whr = &wh[j * hidden..][..hidden];
        for k in 0..hidden {
            acc += whr[k] * h_prev[k];
        }
        out[j] = (acc + b[j]).tanh();
    }
}

/// Param order: fwd.wx, fwd.wh, fwd.bias, bwd.wx, bwd.wh, bwd.bias.
fn birnn_forward<T: Scalar>(x: &[T], batch: usize, steps: usize, f: usize, hidden: usize, p: &[&[T]]) -> Vec<T> {
    let mut out = vec![T::zero(); batch * steps * 2 * hidden];
    let zero = vec![T::zero(); hidden];
    let mut h = vec![T::zero(); hidden];
    for n in 0..batch {
        let xs = &x[n * steps * f..][..steps * f];
        let ys = &mut out[n * steps * 2 * hidden..][..steps * 2 * hidden];
        for t in 0..steps {
            let prev = if t == 0 { zero.clone() } else { ys[(t - 1) * 2 * hidden..][..hidden].to_vec() };
            rnn_cell(&xs[t * f..][..f], &prev, p[0], p[1], p[2], &mut h);
            ys[t * 2 * hidden..][..hidden].copy_from_slice(&h);
        }
        for t in (0..steps).rev() {
            let prev = if t + 1 == steps {
                zero.clone()
            } else {
                ys[(t + 1) * 2 * hidden + hidden..][..hidden].to_vec()
            };
            rnn_cell(&xs[t * f..][..f], &prev, p[3], p[4], p[5], &mut h);
            ys[t * 2 * hidden + hidden..][..hidden].copy_from_slice(&h);
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn birnn_backward<T: Scalar>(
    x: &[T],
    y: &[T],
    dy: &[T],
    batch: usize,
    steps: usize,
    f: usize,
    hidden: usize,
    p: &[&[T]],
) -> (Vec<T>, Vec<Vec<T>>) {
    let mut dx = vec![T::zero(); x.len()];
    let mut grads: Vec<Vec<T>> = p.iter().map(|t| vec![T::zero(); t.len()]).collect();
    let width = 2 * hidden;
    for n in 0..batch {
        let xs = &x[n * steps * f..][..steps * f];
        let ys = &y[n * steps * width..][..steps * width];
        let gys = &dy[n * steps * width..][..steps * width];
        let dxs = &mut dx[n * steps * f..][..steps * f];
        for dir in 0..2 {
            let (wx, wh) = (p[3 * dir], p[3 * dir + 1]);
            let off = dir * hidden;
            let order: Vec<usize> = if dir == 0 { (0..steps).rev().collect() } else { (0..steps).collect() };
            let mut dh_next = vec![T::zero(); hidden];
            let mut da = vec![T::zero(); hidden];
            for &t in &order {
                let h = &ys[t * width + off..][..hidden];
                let prev_t = if dir == 0 { t.checked_sub(1) } else { (t + 1 < steps).then_some(t + 1) };
                for j in 0..hidden {
                    let dh = gys[t * width + off + j] + dh_next[j];
                    da[j] = dh * (T::one() - h[j] * h[j]);
                }
                let xt = &xs[t * f..][..f];
                let dxt = &mut dxs[t * f..][..f];
                for j in 0..hidden {
                    let a = da[j];
                    grads[3 * dir + 2][j] += a;
                    let gwx = &mut grads[3 * dir][j * f..][..f];
                    for i in 0..f {
                        gwx[i] += a * xt[i];
                    }
                    let wxr = &wx[j * f..][..f];
                    for i in 0..f {
                        dxt[i] += a * wxr[i];
                    }
                }
                dh_next.iter_mut().for_each(|v| *v = T::zero());
                if let Some(pt) = prev_t {
                    let hp = &ys[pt * width + off..][..hidden];
                    for j in 0..hidden {
                        let a = da[j];
                        let gwh = &mut grads[3 * dir + 1][j * hidden..][..hidden];
                        let whr = &wh[j * hidden..][..hidden];
                        for k in 0..hidden {
                            gwh[k] += a * hp[k];
                            dh_next[k] += a * whr[k];
                        }
                    }
                }
            }
        }
    }
    (dx, grads)
}

fn softmax_forward<T: Scalar>(x: &[T], batch: usize, sample_shape: &[usize]) -> Vec<T> {
    let (outer, classes, inner) = class_layout(sample_shape);
    let mut out = vec![T::zero(); x.len()];
    for o in 0..batch * outer {
        let base = o * classes * inner;
        for i in 0..inner {
            let mut m = x[base + i];
            for k in 1..classes {
                m = m.max(x[base + k * inner + i]);
            }
            let mut sum = T::zero();
            for k in 0..classes {
                let e = (x[base + k * inner + i] - m).exp();
                out[base + k * inner + i] = e;
                sum += e;
            }
            for k in 0..classes {
                out[base + k * inner + i] = out[base + k * inner + i] / sum;
            }
        }
    }
    out
}

fn softmax_backward<T: Scalar>(y: &[T], dy: &[T], batch: usize, sample_shape: &[usize]) -> Vec<T> {
    let (outer, classes, inner) = class_layout(sample_shape);
    let mut dx = vec![T::zero(); y.len()];
    for o in 0..batch * outer {
        let base = o * classes * inner;
        for i in 0..inner {
            let mut dot = T::zero();
            for k in 0..classes {
                let idx = base + k * inner + i;
                dot += dy[idx] * y[idx];
            }
            for k in 0..classes {
                let idx = base + k * inner + i;
                dx[idx] = y[idx] * (dy[idx] - dot);
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Vec<usize>, data: Vec<f32>) -> Tensor<f32> {
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn relu_clamps_negatives() {
        let l = Layer::<f32>::zeros(LayerSpec::Relu, &[2]).unwrap();
        assert_eq!(l.forward(&t(vec![1, 2], vec![-1.0, 2.0])).unwrap().data(), &[0.0, 2.0]);
    }

    #[test]
    fn identity_convolution() {
        let mut l = Layer::<f32>::zeros(LayerSpec::Conv2d { filters: 1, kernel: 1 }, &[1, 3, 4]).unwrap();
        l.params[0].value.data_mut()[0] = 1.0;
        let x = t(vec![1, 1, 3, 4], (0..12).map(|v| v as f32 * 0.7 - 3.0).collect());
        assert_eq!(l.forward(&x).unwrap(), x);
    }

    #[test]
    fn dense_affine() {
        let mut l = Layer::<f32>::zeros(LayerSpec::Dense { units: 1 }, &[1]).unwrap();
        l.params[0].value.data_mut()[0] = 2.0;
        l.params[1].value.data_mut()[0] = 1.0;
        assert_eq!(l.forward(&t(vec![1, 1], vec![3.0])).unwrap().data(), &[7.0]);
    }

    #[test]
    fn dense_is_time_distributed() {
        let mut l = Layer::<f32>::zeros(LayerSpec::Dense { units: 1 }, &[3, 2]).unwrap();
        l.params[0].value.data_mut().copy_from_slice(&[1.0, 10.0]);
        let y = l.forward(&t(vec![1, 3, 2], vec![1., 2., 3., 4., 5., 6.])).unwrap();
        assert_eq!(y.shape(), &[1, 3, 1]);
        assert_eq!(y.data(), &[21.0, 43.0, 65.0]);
    }

    #[test]
    fn pooling_and_upsampling_shapes() {
        let p = Layer::<f32>::zeros(LayerSpec::MaxPool2x2, &[1, 5, 4]).unwrap();
        assert_eq!(p.output_shape, vec![1, 2, 2]);
        let x = t(vec![1, 1, 2, 2], vec![1.0, 4.0, 3.0, 2.0]);
        let p = Layer::<f32>::zeros(LayerSpec::MaxPool2x2, &[1, 2, 2]).unwrap();
        assert_eq!(p.forward(&x).unwrap().data(), &[4.0]);
        let u = Layer::<f32>::zeros(LayerSpec::Upsample2x, &[1, 1, 2]).unwrap();
        let y = u.forward(&t(vec![1, 1, 1, 2], vec![1.0, 2.0])).unwrap();
        assert_eq!(y.data(), &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn pad_then_unpad() {
        let l = Layer::<f32>::zeros(LayerSpec::Pad2d { pad: 1 }, &[1, 1, 2]).unwrap();
        let x = t(vec![1, 1, 1, 2], vec![5.0, 6.0]);
        let y = l.forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 4]);
        assert_eq!(y.data().iter().sum::<f32>(), 11.0);
        let (dx, _) = l.backward(&x, &y, &y).unwrap();
        assert_eq!(dx, x);
    }

    #[test]
    fn softmax_over_channels_for_maps() {
        let l = Layer::<f32>::zeros(LayerSpec::SoftmaxOutput, &[2, 1, 2]).unwrap();
        let y = l.forward(&t(vec![1, 2, 1, 2], vec![0.0, 1.0, 0.0, 1.0])).unwrap();
        assert_eq!(y.data()[0], 0.5);
        assert_eq!(y.data()[2], 0.5);
        assert!((y.data()[1] + y.data()[3] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn shape_errors() {
        assert!(LayerSpec::Conv2d { filters: 2, kernel: 5 }.output_shape(&[1, 3, 3]).is_err());
        assert!(LayerSpec::BiRnn { hidden: 2 }.output_shape(&[4]).is_err());
        let l = Layer::<f32>::zeros(LayerSpec::Relu, &[3]).unwrap();
        assert!(matches!(l.forward(&t(vec![1, 2], vec![0.0, 0.0])), Err(Error::Shape(_))));
    }

    #[test]
    fn spec_serde_names() {
        let s: LayerSpec = serde_json::from_str(r#"{"kind":"maxpool2x2"}"#).unwrap();
        assert_eq!(s, LayerSpec::MaxPool2x2);
        let s: LayerSpec = serde_json::from_str(r#"{"kind":"birnn","hidden":4}"#).unwrap();
        assert_eq!(s, LayerSpec::BiRnn { hidden: 4 });
    }
}
