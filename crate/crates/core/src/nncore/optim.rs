//! SGD with momentum, weight decay and learning-rate schedules, plus
//! per-weight freezing.

use super::model::ModelGraph;
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Switch to a new learning rate once a step count is reached.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDrop {
    pub at_step: u64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    /// Multiplicative decay per step: `lr <- lr * (1 - lr_decay)`.
    pub lr_decay: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub step_drop: Option<StepDrop>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 1e-4,
            lr_decay: 1e-6,
            momentum: 0.9,
            weight_decay: 0.0,
            step_drop: None,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.lr_decay) {
            return Err(Error::Config(format!("lr_decay must be in [0, 1), got {}", self.lr_decay)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config(format!("weight_decay must be >= 0, got {}", self.weight_decay)));
        }
        if let Some(drop) = self.step_drop {
            if !(drop.learning_rate.is_finite() && drop.learning_rate > 0.0) {
                return Err(Error::Config("step-drop learning rate must be > 0".into()));
            }
        }
        Ok(())
    }
}

/// Per-parameter freeze flags; `None` leaves the whole tensor free.
pub type FreezeMask = Vec<Option<Vec<bool>>>;

#[derive(Debug, Clone)]
pub struct OptimizerState<T = f32> {
    pub config: OptimizerConfig,
    pub learning_rate: f64,
    pub steps: u64,
    velocity: Vec<Tensor<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(config: OptimizerConfig, model: &ModelGraph<T>) -> Result<Self> {
        config.validate()?;
        Ok(OptimizerState {
            learning_rate: config.learning_rate,
            config,
            steps: 0,
            velocity: model
                .params()
                .map(|(_, p)| Tensor::zeros(p.value.shape().to_vec()))
                .collect(),
        })
    }

    pub fn velocity(&self) -> &[Tensor<T>] {
        &self.velocity
    }
}

/// One update. Free weights: `v <- m·v + g + wd·w; w <- w − lr·v`.
/// Frozen weights keep their value bit for bit and their velocity is reset.
pub fn sgd_step<T: Scalar>(
    model: &mut ModelGraph<T>,
    grads: &[Tensor<T>],
    opt: &mut OptimizerState<T>,
    freeze: Option<&FreezeMask>,
) -> Result<()> {
    let n = model.num_params();
    if grads.len() != n || opt.velocity.len() != n {
        return Err(Error::Shape(format!(
            "{n} parameters, {} gradients, {} velocity buffers",
            grads.len(),
            opt.velocity.len()
        )));
    }
    if let Some(mask) = freeze {
        if mask.len() != n {
            return Err(Error::Shape(format!("freeze mask covers {} of {n} parameters", mask.len())));
        }
    }
    let lr = T::lit(opt.learning_rate);
    let momentum = T::lit(opt.config.momentum);
    let wd = T::lit(opt.config.weight_decay);
    for id in 0..n {
        let param = model.param_mut(id);
        let g = &grads[id];
        let v = &mut opt.velocity[id];
        if g.shape() != param.value.shape() || v.shape() != param.value.shape() {
            return Err(Error::Shape(format!(
                "parameter {id}: value {:?}, gradient {:?}",
                param.value.shape(),
                g.shape()
            )));
        }
        let frozen = freeze.and_then(|m| m[id].as_deref());
        if let Some(f) = frozen {
            if f.len() != param.value.len() {
                return Err(Error::Shape(format!("freeze mask for parameter {id} has wrong length")));
            }
        }
        let w = param.value.data_mut();
        let vd = v.data_mut();
        for i in 0..w.len() {
            if frozen.is_some_and(|f| f[i]) {
                vd[i] = T::zero();
                continue;
            }
            vd[i] = momentum * vd[i] + g.data()[i] + wd * w[i];
            w[i] -= lr * vd[i];
        }
    }
    opt.steps += 1;
    opt.learning_rate *= 1.0 - opt.config.lr_decay;
    if let Some(drop) = opt.config.step_drop {
        if opt.steps == drop.at_step {
            opt.learning_rate = drop.learning_rate;
        }
    }
    Ok(())
}
