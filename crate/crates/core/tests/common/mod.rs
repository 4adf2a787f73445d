//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use inqkit::inq::PartitionState;
use inqkit::nncore::{Layer, LayerSpec, ModelGraph, Tensor};
use inqkit::LevelSet;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// `2^p` in f64, built from the bit pattern (0 below the subnormal range).
pub fn pow2(p: i32) -> f64 {
    if p > 1023 {
        f64::INFINITY
    } else if p >= -1022 {
        f64::from_bits(((p + 1023) as u64) << 52)
    } else if p >= -1074 {
        f64::from_bits(1u64 << (p + 1074))
    } else {
        0.0
    }
}

/// `a < 3·2^k`, exact for any f32 magnitude `a`. Thresholds under 2^-1000
/// are positive but below every nonzero f32.
fn below(a: f64, k: i32) -> bool {
    if k < -1000 {
        a == 0.0
    } else {
        a < 3.0 * pow2(k)
    }
}

/// Interval-scan quantizer: walks every exponent from `n2` to `n1` and
/// returns the one whose `[3·2^(p−2), 3·2^(p−1))` interval holds `|w|`.
pub fn scan_quantize(w: f32, n1: i32, n2: i32) -> f64 {
    let a = (w as f64).abs();
    let sign = if w < 0.0 { -1.0 } else { 1.0 };
    if below(a, n2 - 2) {
        return 0.0;
    }
    if !below(a, n1 - 1) {
        return sign * pow2(n1);
    }
    for p in n2..=n1 {
        if !below(a, p - 2) && below(a, p - 1) {
            return sign * pow2(p);
        }
    }
    unreachable!("intervals tile [zero threshold, clamp threshold)")
}

/// Any valid level set: bit width 2..=16 and a top exponent that keeps
/// the stored bounds within i16.
pub fn random_level_set(rng: &mut ChaCha8Rng) -> LevelSet {
    let b = rng.gen_range(2..=16u32);
    let lo = (LevelSet::exponent_count(b) - 1 - 32768).max(-140);
    let n1 = rng.gen_range(lo..=127);
    LevelSet::new(b, n1).unwrap()
}

/// Values concentrated around the level set's thresholds, including exact
/// interval boundaries, signed zeros and extremes.
pub fn random_value(rng: &mut ChaCha8Rng, ls: &LevelSet) -> f32 {
    let sign = if rng.gen_bool(0.5) { -1.0f32 } else { 1.0 };
    let lo = (ls.n2() - 3).max(-149);
    let hi = (ls.n1() + 3).min(127);
    match rng.gen_range(0..10) {
        0 => {
            // exact boundary 3·2^(p−2)
            let p = rng.gen_range(lo.max(-146)..=hi);
            sign * (3.0 * pow2(p - 2)) as f32
        }
        1 => sign * pow2(rng.gen_range(lo..=hi)) as f32,
        2 => [0.0, -0.0, f32::MAX, -f32::MAX, f32::MIN_POSITIVE, 1e-45][rng.gen_range(0..6)],
        3 => {
            // one ulp either side of a boundary
            let p = rng.gen_range(lo.max(-146)..=hi);
            let t = (3.0 * pow2(p - 2)) as f32;
            let bits = t.to_bits();
            sign * f32::from_bits(if rng.gen_bool(0.5) { bits + 1 } else { bits - 1 })
        }
        _ => {
            let e = rng.gen_range(lo..=hi);
            let v = (pow2(e) * rng.gen_range(1.0..2.0)) as f32;
            if v.is_finite() {
                sign * v
            } else {
                sign * f32::MAX
            }
        }
    }
}

/// `‖a − n‖ / max(‖a‖, ‖n‖)`; 0 when both vanish.
pub fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nn: f64 = n.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
}

/// Randomly initialised f64 layer (weights and biases both nonzero).
pub fn random_layer(rng: &mut ChaCha8Rng, spec: LayerSpec, input: &[usize]) -> Layer<f64> {
    let mut layer = Layer::<f64>::zeros(spec, input).unwrap();
    for p in &mut layer.params {
        for v in p.value.data_mut() {
            *v = rng.gen_range(-0.8..0.8);
        }
    }
    layer
}

/// Random dense or conv model whose weights are all quantized at a random
/// bit width; biases stay float.
pub fn random_quantized_model(rng: &mut ChaCha8Rng, conv: bool) -> (ModelGraph<f32>, PartitionState) {
    let (input, specs) = if conv {
        let c = rng.gen_range(1..=3);
        let s = rng.gen_range(6..=9);
        let mut specs = vec![
            LayerSpec::Pad2d { pad: rng.gen_range(0..=1) },
            LayerSpec::Conv2d { filters: rng.gen_range(1..=4), kernel: rng.gen_range(1..=3) },
            LayerSpec::Relu,
            LayerSpec::MaxPool2x2,
            LayerSpec::Conv2d { filters: rng.gen_range(1..=4), kernel: 1 },
        ];
        if rng.gen_bool(0.5) {
            specs.push(LayerSpec::Upsample2x);
        }
        specs.extend([LayerSpec::Flatten, LayerSpec::Dense { units: rng.gen_range(2..=5) }]);
        if rng.gen_bool(0.5) {
            specs.push(LayerSpec::SoftmaxOutput);
        }
        (vec![c, s, s], specs)
    } else {
        let mut specs = vec![LayerSpec::Dense { units: rng.gen_range(1..=12) }, LayerSpec::Relu];
        specs.push(LayerSpec::Dense { units: rng.gen_range(1..=8) });
        if rng.gen_bool(0.5) {
            specs.push(LayerSpec::SoftmaxOutput);
        }
        (vec![rng.gen_range(1..=16)], specs)
    };
    let mut model = ModelGraph::new(&input, &specs, rng.gen()).unwrap();
    for layer in model.layers_mut() {
        for p in &mut layer.params {
            if p.kind == inqkit::nncore::ParamKind::Bias {
                for v in p.value.data_mut() {
                    *v = rng.gen_range(-0.5..0.5);
                }
            }
        }
    }
    let b = rng.gen_range(2..=8);
    let mut state = PartitionState::new(&model, b, None).unwrap();
    for t in 0..state.tensors.len() {
        let all: Vec<usize> = (0..state.tensors[t].len()).collect();
        state.quantize_group(&mut model, t, &all).unwrap();
    }
    (model, state)
}

pub fn random_input(rng: &mut ChaCha8Rng, sample_shape: &[usize], batch: usize) -> Tensor<f32> {
    let mut shape = vec![batch];
    shape.extend_from_slice(sample_shape);
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-4.0f32..4.0)).collect()).unwrap()
}

pub const FD_EPS: f64 = 1e-3;

/// Relative errors of backprop against central differences for
/// `L = Σ r ⊙ layer(x)`: first the input gradient, then one per parameter.
pub fn layer_gradcheck(layer: &Layer<f64>, x: &Tensor<f64>, r: &[f64]) -> Vec<f64> {
    let objective = |l: &Layer<f64>, x: &Tensor<f64>| -> f64 {
        l.forward(x).unwrap().data().iter().zip(r).map(|(y, w)| y * w).sum()
    };
    let y = layer.forward(x).unwrap();
    let dy = Tensor::new(y.shape().to_vec(), r.to_vec()).unwrap();
    let (dx, grads) = layer.backward(x, &y, &dy).unwrap();

    let mut numeric_dx = Vec::with_capacity(x.len());
    for j in 0..x.len() {
        let mut xp = x.clone();
        xp.data_mut()[j] += FD_EPS;
        let mut xm = x.clone();
        xm.data_mut()[j] -= FD_EPS;
        numeric_dx.push((objective(layer, &xp) - objective(layer, &xm)) / (2.0 * FD_EPS));
    }
    let mut errs = vec![rel_err(dx.data(), &numeric_dx)];
    for (k, g) in grads.iter().enumerate() {
        let mut numeric = Vec::with_capacity(g.len());
        for j in 0..g.len() {
            let mut lp = layer.clone();
            lp.params[k].value.data_mut()[j] += FD_EPS;
            let mut lm = layer.clone();
            lm.params[k].value.data_mut()[j] -= FD_EPS;
            numeric.push((objective(&lp, x) - objective(&lm, x)) / (2.0 * FD_EPS));
        }
        errs.push(rel_err(g.data(), &numeric));
    }
    errs
}

/// Same check for the mean cross-entropy of a whole model, parameters only.
pub fn model_gradcheck(model: &ModelGraph<f64>, x: &Tensor<f64>, targets: &[usize]) -> Vec<f64> {
    let (_, grads) = model.loss_and_grads(x, targets).unwrap();
    let mut errs = Vec::new();
    for (id, g) in grads.iter().enumerate() {
        let mut numeric = Vec::with_capacity(g.len());
        for j in 0..g.len() {
            let mut mp = model.clone();
            mp.param_mut(id).value.data_mut()[j] += FD_EPS;
            let mut mm = model.clone();
            mm.param_mut(id).value.data_mut()[j] -= FD_EPS;
            numeric.push((mp.loss(x, targets).unwrap() - mm.loss(x, targets).unwrap()) / (2.0 * FD_EPS));
        }
        errs.push(rel_err(g.data(), &numeric));
    }
    errs
}

/// A random instance of one layer kind with inputs kept away from the
/// relu kink and from max-pool ties. Returns `(layer, input, upstream grad)`.
pub fn gradcheck_instance(rng: &mut ChaCha8Rng, kind: &str) -> (Layer<f64>, Tensor<f64>, Vec<f64>) {
    let batch = rng.gen_range(1..=3);
    let (spec, sample): (LayerSpec, Vec<usize>) = match kind {
        "dense" => {
            let mut s = vec![rng.gen_range(1..=6)];
            if rng.gen_bool(0.5) {
                s.insert(0, rng.gen_range(2..=4));
            }
            (LayerSpec::Dense { units: rng.gen_range(1..=5) }, s)
        }
        "conv2d" => {
            let k = rng.gen_range(1..=3);
            let s = rng.gen_range(k..=k + 3);
            (
                LayerSpec::Conv2d { filters: rng.gen_range(1..=3), kernel: k },
                vec![rng.gen_range(1..=3), s, s + rng.gen_range(0..=1)],
            )
        }
        "pad2d" => (LayerSpec::Pad2d { pad: rng.gen_range(1..=2) }, vec![rng.gen_range(1..=2), 3, 4]),
        "relu" => (LayerSpec::Relu, vec![rng.gen_range(2..=10)]),
        "maxpool2x2" => (LayerSpec::MaxPool2x2, vec![rng.gen_range(1..=2), rng.gen_range(2..=5), rng.gen_range(2..=5)]),
        "upsample2x" => (LayerSpec::Upsample2x, vec![rng.gen_range(1..=2), 2, 3]),
        "flatten" => (LayerSpec::Flatten, vec![2, 3, 2]),
        "birnn" => (
            LayerSpec::BiRnn { hidden: rng.gen_range(1..=4) },
            vec![rng.gen_range(1..=5), rng.gen_range(1..=4)],
        ),
        "softmax_output" => {
            let s = if rng.gen_bool(0.5) { vec![rng.gen_range(2..=6)] } else { vec![3, 2, 2] };
            (LayerSpec::SoftmaxOutput, s)
        }
        other => panic!("unknown layer kind {other}"),
    };
    let layer = random_layer(rng, spec.clone(), &sample);
    let mut shape = vec![batch];
    shape.extend_from_slice(&sample);
    let n: usize = shape.iter().product();
    let data: Vec<f64> = match spec {
        LayerSpec::Relu => (0..n)
            .map(|_| {
                let v: f64 = rng.gen_range(0.05..1.0);
                if rng.gen_bool(0.5) { -v } else { v }
            })
            .collect(),
        LayerSpec::MaxPool2x2 => {
            // distinct values 0.01 apart
            let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.01 - 0.5 * n as f64 * 0.01).collect();
            use rand::seq::SliceRandom;
            v.shuffle(rng);
            v
        }
        _ => uniform(rng, n, 1.0),
    };
    let x = Tensor::new(shape, data).unwrap();
    let out = layer.forward(&x).unwrap().len();
    let r = uniform(rng, out, 1.0);
    (layer, x, r)
}

pub const LAYER_KINDS: [&str; 9] = [
    "dense",
    "conv2d",
    "pad2d",
    "relu",
    "maxpool2x2",
    "upsample2x",
    "flatten",
    "birnn",
    "softmax_output",
];

/// Linearly separable Gaussian blobs: `[n, dim]` inputs, `classes` labels.
pub fn toy_dataset(rng: &mut ChaCha8Rng, n: usize, dim: usize, classes: usize) -> inqkit::nncore::Dataset {
    let centers: Vec<Vec<f32>> = (0..classes)
        .map(|_| (0..dim).map(|_| rng.gen_range(-2.0f32..2.0)).collect())
        .collect();
    let mut x = Vec::with_capacity(n * dim);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        x.extend(centers[c].iter().map(|m| m + rng.gen_range(-0.3f32..0.3)));
        y.push(c);
    }
    inqkit::nncore::Dataset::new(Tensor::new(vec![n, dim], x).unwrap(), y).unwrap()
}
