use super::layers::{Layer, LayerSpec, Param, ParamKind};
use super::tensor::{class_layout, positions_per_sample, Scalar, Tensor};
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Ordered stack of layers plus the seed its parameters were drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph<T = f32> {
    input_shape: Vec<usize>,
    layers: Vec<Layer<T>>,
    seed: u64,
}

impl ModelGraph<f32> {
    /// Builds the model and draws weights uniformly in `±sqrt(6/fan_in)`
    /// (tanh recurrences use `±sqrt(3/fan_in)`). Biases start at zero.
    pub fn new(input_shape: &[usize], specs: &[LayerSpec], seed: u64) -> Result<Self> {
        let mut model = Self::zeros(input_shape, specs, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut model.layers {
            let spec = layer.spec.clone();
            for p in &mut layer.params {
                if p.kind == ParamKind::Weight {
                    let bound = spec.init_bound(p.fan_in);
                    for v in p.value.data_mut() {
                        *v = rng.gen_range(-bound..bound) as f32;
                    }
                }
            }
        }
        Ok(model)
    }
}

impl<T: Scalar> ModelGraph<T> {
    pub fn zeros(input_shape: &[usize], specs: &[LayerSpec], seed: u64) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::InvalidModel("no layers".into()));
        }
        let mut layers = Vec::with_capacity(specs.len());
        let mut shape = input_shape.to_vec();
        for spec in specs {
            let layer = Layer::zeros(spec.clone(), &shape)?;
            shape = layer.output_shape.clone();
            layers.push(layer);
        }
        Ok(ModelGraph {
            input_shape: input_shape.to_vec(),
            layers,
            seed,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.layers.last().unwrap().output_shape
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec.clone()).collect()
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    /// Number of parameter tensors.
    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.params.len()).sum()
    }

    /// Total scalar parameter count.
    pub fn param_count(&self) -> usize {
        self.params().map(|(_, p)| p.value.len()).sum()
    }

    /// Parameters in flat order, each with its `"{layer}.{name}"` label.
    pub fn params(&self) -> impl Iterator<Item = (String, &Param<T>)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.params.iter().map(move |p| (format!("{i}.{}", p.name), p)))
    }

    pub fn param(&self, id: usize) -> &Param<T> {
        let (l, s) = self.locate(id);
        &self.layers[l].params[s]
    }

    pub fn param_mut(&mut self, id: usize) -> &mut Param<T> {
        let (l, s) = self.locate(id);
        &mut self.layers[l].params[s]
    }

    fn locate(&self, mut id: usize) -> (usize, usize) {
        for (l, layer) in self.layers.iter().enumerate() {
            if id < layer.params.len() {
                return (l, id);
            }
            id -= layer.params.len();
        }
        panic!("parameter id out of range");
    }

    pub fn cast<U: Scalar>(&self) -> ModelGraph<U> {
        ModelGraph {
            input_shape: self.input_shape.clone(),
            layers: self.layers.iter().map(|l| l.cast()).collect(),
            seed: self.seed,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward_until(x, self.layers.len())
    }

    /// Output of the first `n_layers` layers.
    pub fn forward_until(&self, x: &Tensor<T>, n_layers: usize) -> Result<Tensor<T>> {
        let mut cur = x.clone();
        for layer in &self.layers[..n_layers.min(self.layers.len())] {
            cur = layer.forward(&cur)?;
        }
        Ok(cur)
    }

    /// Input followed by the output of every layer.
    pub fn activations(&self, x: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.clone());
        for layer in &self.layers {
            let next = layer.forward(acts.last().unwrap())?;
            acts.push(next);
        }
        Ok(acts)
    }

    /// Index of the last layer carrying parameters.
    pub fn last_parametric_layer(&self) -> Option<usize> {
        self.layers.iter().rposition(|l| !l.params.is_empty())
    }

    fn check_head(&self) -> Result<()> {
        if self.layers.last().map(|l| &l.spec) != Some(&LayerSpec::SoftmaxOutput) {
            return Err(Error::InvalidModel(
                "cross-entropy training needs a softmax_output head".into(),
            ));
        }
        Ok(())
    }

    fn check_targets(&self, batch: usize, targets: &[usize]) -> Result<usize> {
        let sample = self.output_shape();
        let expected = batch * positions_per_sample(sample);
        if targets.len() != expected {
            return Err(Error::InvalidTarget(format!(
                "expected {expected} targets, got {}",
                targets.len()
            )));
        }
        let (_, classes, _) = class_layout(sample);
        if let Some(bad) = targets.iter().find(|&&t| t >= classes) {
            return Err(Error::InvalidTarget(format!(
                "class {bad} outside 0..{classes}"
            )));
        }
        Ok(classes)
    }

    /// Mean cross-entropy, computed from the logits feeding the softmax head.
    pub fn loss(&self, x: &Tensor<T>, targets: &[usize]) -> Result<T> {
        self.check_head()?;
        let logits = self.forward_until(x, self.layers.len() - 1)?;
        self.check_targets(x.shape()[0], targets)?;
        Ok(xent_from_logits(&logits, targets).0)
    }

    /// Mean cross-entropy and its gradient for every parameter, in flat order.
    pub fn loss_and_grads(&self, x: &Tensor<T>, targets: &[usize]) -> Result<(T, Vec<Tensor<T>>)> {
        self.check_head()?;
        let acts = self.activations(x)?;
        self.check_targets(x.shape()[0], targets)?;
        let n = self.layers.len();
        let (loss, mut grad) = xent_from_logits(&acts[n - 1], targets);
        let mut per_layer: Vec<Vec<Tensor<T>>> = vec![Vec::new(); n];
        for l in (0..n - 1).rev() {
            let (dx, g) = self.layers[l].backward(&acts[l], &acts[l + 1], &grad)?;
            per_layer[l] = g;
            grad = dx;
        }
        Ok((loss, per_layer.into_iter().flatten().collect()))
    }
}

/// Mean cross-entropy over positions plus its gradient w.r.t. the logits,
/// `(softmax(z) − onehot) / positions`.
fn xent_from_logits<T: Scalar>(logits: &Tensor<T>, targets: &[usize]) -> (T, Tensor<T>) {
    let sample = &logits.shape()[1..];
    let (outer, classes, inner) = class_layout(sample);
    let batch = logits.shape()[0];
    let z = logits.data();
    let positions = batch * outer * inner;
    let scale = T::one() / T::from(positions).unwrap();
    let mut grad = vec![T::zero(); z.len()];
    let mut total = T::zero();
    for o in 0..batch * outer {
        let base = o * classes * inner;
        for i in 0..inner {
            let target = targets[o * inner + i];
            let mut m = z[base + i];
            for k in 1..classes {
                m = m.max(z[base + k * inner + i]);
            }
            let mut sum = T::zero();
            for k in 0..classes {
                sum += (z[base + k * inner + i] - m).exp();
            }
            let lse = m + sum.ln();
            total += lse - z[base + target * inner + i];
            for k in 0..classes {
                let idx = base + k * inner + i;
                let p = (z[idx] - lse).exp();
                let onehot = if k == target { T::one() } else { T::zero() };
                grad[idx] = (p - onehot) * scale;
            }
        }
    }
    (total * scale, Tensor::new(logits.shape().to_vec(), grad).unwrap())
}
