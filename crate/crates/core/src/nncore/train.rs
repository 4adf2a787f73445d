use super::model::ModelGraph;
use super::optim::{sgd_step, FreezeMask, OptimizerState};
use super::tensor::{argmax_positions, positions_per_sample, Tensor};
use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

/// Inputs with one class target per output position (sample, frame or pixel).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Tensor<f32>,
    pub targets: Vec<usize>,
}

impl Dataset {
    pub fn new(inputs: Tensor<f32>, targets: Vec<usize>) -> Result<Self> {
        let n = inputs.shape().first().copied().unwrap_or(0);
        if n == 0 || !targets.len().is_multiple_of(n) {
            return Err(Error::Shape(format!(
                "{} targets do not divide evenly over {n} samples",
                targets.len()
            )));
        }
        Ok(Dataset { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    pub fn targets_per_sample(&self) -> usize {
        self.targets.len() / self.len()
    }

    pub fn sample_targets(&self, i: usize) -> &[usize] {
        let k = self.targets_per_sample();
        &self.targets[i * k..(i + 1) * k]
    }

    pub fn batch(&self, indices: &[usize]) -> (Tensor<f32>, Vec<usize>) {
        let x = self.inputs.gather_rows(indices);
        let k = self.targets_per_sample();
        let mut t = Vec::with_capacity(indices.len() * k);
        for &i in indices {
            t.extend_from_slice(&self.targets[i * k..(i + 1) * k]);
        }
        (x, t)
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let (inputs, targets) = self.batch(indices);
        Dataset { inputs, targets }
    }
}

/// Runs `epochs` passes of shuffled minibatch SGD and returns the mean loss
/// of each epoch.
pub fn train_epochs(
    model: &mut ModelGraph<f32>,
    opt: &mut OptimizerState<f32>,
    data: &Dataset,
    epochs: usize,
    batch_size: usize,
    freeze: Option<&FreezeMask>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be > 0".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut losses = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(batch_size) {
            let (x, t) = data.batch(chunk);
            let (loss, grads) = model.loss_and_grads(&x, &t)?;
            if !loss.is_finite() {
                return Err(Error::InvalidModel("training diverged (non-finite loss)".into()));
            }
            sgd_step(model, &grads, opt, freeze)?;
            total += loss as f64;
            batches += 1;
        }
        losses.push(total / batches.max(1) as f64);
    }
    Ok(losses)
}

/// Forward pass in fixed-size chunks; output rows follow input order.
pub fn predict(model: &ModelGraph<f32>, inputs: &Tensor<f32>, batch_size: usize) -> Result<Tensor<f32>> {
    let n = inputs.shape()[0];
    let mut data = Vec::new();
    let mut out_shape = vec![n];
    out_shape.extend_from_slice(model.output_shape());
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let y = model.forward(&inputs.gather_rows(chunk))?;
        data.extend_from_slice(y.data());
    }
    Tensor::new(out_shape, data)
}

/// Argmax class at every output position of a dataset.
pub fn predict_classes(model: &ModelGraph<f32>, data: &Dataset, batch_size: usize) -> Result<Vec<usize>> {
    Ok(argmax_positions(&predict(model, &data.inputs, batch_size)?))
}

/// Fraction of positions whose argmax matches the target.
pub fn position_accuracy(model: &ModelGraph<f32>, data: &Dataset, batch_size: usize) -> Result<f64> {
    debug_assert_eq!(positions_per_sample(model.output_shape()), data.targets_per_sample());
    let pred = predict_classes(model, data, batch_size)?;
    let hits = pred.iter().zip(&data.targets).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / pred.len() as f64)
}
