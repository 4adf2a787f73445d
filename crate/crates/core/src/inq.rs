//! Incremental quantization: partition each weight tensor, quantize one group
//! onto its level set, retrain the rest, repeat until nothing is left free.
//!
//! Partition counts use round-half-up on `fraction · N`. The magnitude
//! strategy ranks the currently free weights by `|w|` (largest first, ties by
//! ascending index), so thresholds are recomputed over free weights only at
//! every step. Level sets are derived once from the starting weights and kept
//! fixed. Biases are never quantized.

use crate::error::{Error, Result};
use crate::nncore::{train_epochs, Dataset, FreezeMask, ModelGraph, OptimizerConfig, OptimizerState};
use crate::quantlevels::{LevelSet, QuantCode};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionStrategy {
    /// Largest magnitudes are quantized first.
    #[default]
    Magnitude,
    /// Uniformly random free positions.
    Random,
}

/// Accumulated quantized fractions, one per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InqSchedule {
    fractions: Vec<f64>,
    pub epochs_per_step: usize,
}

impl InqSchedule {
    pub fn new(fractions: Vec<f64>, epochs_per_step: usize) -> Result<Self> {
        if fractions.is_empty() {
            return Err(Error::Schedule("no steps".into()));
        }
        let mut prev = 0.0;
        for &f in &fractions {
            if !(f > prev && f <= 1.0) {
                return Err(Error::Schedule(format!(
                    "fractions must increase strictly within (0, 1], got {fractions:?}"
                )));
            }
            prev = f;
        }
        if prev != 1.0 {
            return Err(Error::Schedule(format!("last fraction must be 1.0, got {prev}")));
        }
        Ok(InqSchedule {
            fractions,
            epochs_per_step,
        })
    }

    /// `{50%, 75%, 87.5%, 100%}` with two retraining epochs per step.
    pub fn four_step() -> Self {
        InqSchedule::new(vec![0.5, 0.75, 0.875, 1.0], 2).unwrap()
    }

    /// Quantize everything at once, no retraining.
    pub fn one_shot() -> Self {
        InqSchedule::new(vec![1.0], 0).unwrap()
    }

    pub fn fractions(&self) -> &[f64] {
        &self.fractions
    }
}

/// `round(fraction · n)` with halves rounded up.
pub fn target_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64 + 0.5).floor() as usize).min(n)
}

/// Picks the free positions to quantize so that `round(target_fraction · N)`
/// positions end up quantized. Returned positions are sorted ascending.
pub fn partition_layer<R: Rng + ?Sized>(
    weights: &[f32],
    free_mask: &[bool],
    target_fraction: f64,
    strategy: PartitionStrategy,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if weights.len() != free_mask.len() {
        return Err(Error::Shape("weights and free mask differ in length".into()));
    }
    if !(0.0..=1.0).contains(&target_fraction) {
        return Err(Error::Partition(format!("target fraction {target_fraction} outside [0, 1]")));
    }
    let n = weights.len();
    let free: Vec<usize> = (0..n).filter(|&i| free_mask[i]).collect();
    let quantized = n - free.len();
    let target = target_count(target_fraction, n);
    if target < quantized {
        return Err(Error::Partition(format!(
            "target fraction {target_fraction} ({target} of {n}) is below the {quantized} weights already quantized"
        )));
    }
    let need = target - quantized;
    let mut picked = match strategy {
        PartitionStrategy::Magnitude => {
            let mut ranked = free;
            // stable sort keeps ascending index among equal magnitudes
            ranked.sort_by(|&a, &b| weights[b].abs().total_cmp(&weights[a].abs()));
            ranked.truncate(need);
            ranked
        }
        PartitionStrategy::Random => sample(rng, free.len(), need)
            .into_iter()
            .map(|k| free[k])
            .collect(),
    };
    picked.sort_unstable();
    Ok(picked)
}

/// Quantization state of one weight tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorPartition {
    pub param_id: usize,
    pub name: String,
    pub level_set: LevelSet,
    /// `true` while the weight is still floating point.
    pub free: Vec<bool>,
    /// Code of each quantized position; zero for free positions.
    pub codes: Vec<QuantCode>,
}

impl TensorPartition {
    pub fn len(&self) -> usize {
        self.free.len()
    }

    pub fn is_empty(&self) -> bool {
        self.free.is_empty()
    }

    pub fn quantized_count(&self) -> usize {
        self.free.iter().filter(|f| !**f).count()
    }

    pub fn is_fully_quantized(&self) -> bool {
        self.free.iter().all(|f| !f)
    }
}

/// Free/quantized split of every quantizable tensor of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionState {
    pub tensors: Vec<TensorPartition>,
}

impl PartitionState {
    /// All weights free; level sets derived from the current weights.
    pub fn new(model: &ModelGraph<f32>, bit_width: u32, max_level_override: Option<f32>) -> Result<Self> {
        let mut tensors = Vec::new();
        for (id, (name, p)) in model.params().enumerate() {
            if !p.is_quantizable() {
                continue;
            }
            let level_set = LevelSet::for_weights(p.value.data(), bit_width, max_level_override)?;
            tensors.push(TensorPartition {
                param_id: id,
                name,
                level_set,
                free: vec![true; p.value.len()],
                codes: vec![QuantCode::ZERO; p.value.len()],
            });
        }
        Ok(PartitionState { tensors })
    }

    pub fn for_param(&self, param_id: usize) -> Option<&TensorPartition> {
        self.tensors.iter().find(|t| t.param_id == param_id)
    }

    /// Replaces the weights at `positions` of tensor `t` by their quantized
    /// values and marks them quantized.
    pub fn quantize_group(&mut self, model: &mut ModelGraph<f32>, t: usize, positions: &[usize]) -> Result<()> {
        let part = self
            .tensors
            .get_mut(t)
            .ok_or_else(|| Error::Partition(format!("no quantizable tensor {t}")))?;
        let weights = model.param_mut(part.param_id).value.data_mut();
        for &i in positions {
            if i >= part.free.len() {
                return Err(Error::Partition(format!("position {i} out of range in {}", part.name)));
            }
            if !part.free[i] {
                return Err(Error::Partition(format!(
                    "position {i} of {} is already quantized",
                    part.name
                )));
            }
        }
        for &i in positions {
            let q = part.level_set.quantize(weights[i])?;
            part.codes[i] = part.level_set.encode(q)?;
            weights[i] = q;
            part.free[i] = false;
        }
        Ok(())
    }

    /// Quantized positions frozen, everything else (biases included) free.
    pub fn freeze_mask(&self, model: &ModelGraph<f32>) -> FreezeMask {
        let mut mask: FreezeMask = vec![None; model.num_params()];
        for t in &self.tensors {
            mask[t.param_id] = Some(t.free.iter().map(|f| !f).collect());
        }
        mask
    }

    pub fn quantized_fraction(&self) -> f64 {
        let total: usize = self.tensors.iter().map(|t| t.len()).sum();
        let q: usize = self.tensors.iter().map(|t| t.quantized_count()).sum();
        if total == 0 {
            1.0
        } else {
            q as f64 / total as f64
        }
    }

    pub fn is_complete(&self) -> bool {
        self.tensors.iter().all(|t| t.is_fully_quantized())
    }

    /// Checks that every quantized position holds exactly its decoded level
    /// and that free/quantized cover each tensor without overlap.
    pub fn verify(&self, model: &ModelGraph<f32>) -> Result<()> {
        for t in &self.tensors {
            let w = model.param(t.param_id).value.data();
            if w.len() != t.free.len() || t.codes.len() != t.free.len() {
                return Err(Error::Partition(format!("{}: partition does not cover the tensor", t.name)));
            }
            for i in 0..w.len() {
                if t.free[i] {
                    continue;
                }
                let level = t.level_set.decode(t.codes[i])?;
                if level.to_bits() != w[i].to_bits() {
                    return Err(Error::Partition(format!(
                        "{}[{i}] = {} drifted from its quantized level {level}",
                        t.name, w[i]
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InqConfig {
    pub bit_width: u32,
    pub schedule: InqSchedule,
    pub strategy: PartitionStrategy,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub max_level_override: Option<f32>,
    pub seed: u64,
}

impl InqConfig {
    pub fn new(bit_width: u32) -> Self {
        InqConfig {
            bit_width,
            schedule: InqSchedule::four_step(),
            strategy: PartitionStrategy::Magnitude,
            optimizer: OptimizerConfig::default(),
            batch_size: 32,
            max_level_override: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InqStepLog {
    pub step: usize,
    pub target_fraction: f64,
    pub quantized_fraction: f64,
    /// `(quantized, total)` per quantizable tensor.
    pub tensor_counts: Vec<(usize, usize)>,
    pub train_loss: Option<f64>,
    pub val_metric: Option<f64>,
}

pub type Validator<'a> = &'a dyn Fn(&ModelGraph<f32>) -> Result<f64>;

/// Runs the full partition / quantize / retrain loop in place.
pub fn inq_train(
    model: &mut ModelGraph<f32>,
    data: &Dataset,
    cfg: &InqConfig,
    validate: Option<Validator<'_>>,
) -> Result<(PartitionState, Vec<InqStepLog>)> {
    let mut state = PartitionState::new(model, cfg.bit_width, cfg.max_level_override)?;
    let mut opt = OptimizerState::new(cfg.optimizer.clone(), model)?;
    let mut train_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut part_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    part_rng.set_stream(1);
    let mut log = Vec::with_capacity(cfg.schedule.fractions().len());

    for (step, &fraction) in cfg.schedule.fractions().iter().enumerate() {
        for t in 0..state.tensors.len() {
            let part = &state.tensors[t];
            let weights = model.param(part.param_id).value.data();
            let picked = partition_layer(weights, &part.free, fraction, cfg.strategy, &mut part_rng)?;
            state.quantize_group(model, t, &picked)?;
        }
        let train_loss = if cfg.schedule.epochs_per_step > 0 {
            let mask = state.freeze_mask(model);
            let losses = train_epochs(
                model,
                &mut opt,
                data,
                cfg.schedule.epochs_per_step,
                cfg.batch_size,
                Some(&mask),
                &mut train_rng,
            )?;
            losses.last().copied()
        } else {
            None
        };
        state.verify(model)?;
        let val_metric = validate.map(|f| f(model)).transpose()?;
        let entry = InqStepLog {
            step,
            target_fraction: fraction,
            quantized_fraction: state.quantized_fraction(),
            tensor_counts: state.tensors.iter().map(|t| (t.quantized_count(), t.len())).collect(),
            train_loss,
            val_metric,
        };
        log::debug!("inq step {step}: {entry:?}");
        log.push(entry);
    }
    Ok((state, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::{LayerSpec, Tensor};

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(3)
    }

    #[test]
    fn magnitude_partition_example() {
        let w = [0.5, -0.1, 0.3, 0.05];
        let p = partition_layer(&w, &[true; 4], 0.5, PartitionStrategy::Magnitude, &mut rng()).unwrap();
        assert_eq!(p, vec![0, 2]);
    }

    #[test]
    fn partition_extremes() {
        let w = [0.5, -0.1, 0.3, 0.05];
        let free = [true, false, true, true];
        assert!(partition_layer(&w, &[true; 4], 0.0, PartitionStrategy::Magnitude, &mut rng())
            .unwrap()
            .is_empty());
        let all = partition_layer(&w, &free, 1.0, PartitionStrategy::Random, &mut rng()).unwrap();
        assert_eq!(all, vec![0, 2, 3]);
    }

    #[test]
    fn partition_ties_by_index() {
        let w = [0.2, -0.2, 0.2, 0.1];
        let p = partition_layer(&w, &[true; 4], 0.5, PartitionStrategy::Magnitude, &mut rng()).unwrap();
        assert_eq!(p, vec![0, 1]);
    }

    #[test]
    fn partition_below_current_is_error() {
        let w = [1.0; 4];
        let free = [false, false, false, true];
        let e = partition_layer(&w, &free, 0.5, PartitionStrategy::Magnitude, &mut rng());
        assert!(matches!(e, Err(Error::Partition(_))));
    }

    #[test]
    fn rounding_is_half_up() {
        assert_eq!(target_count(0.5, 3), 2);
        assert_eq!(target_count(0.875, 10), 9);
        assert_eq!(target_count(0.75, 10), 8);
        assert_eq!(target_count(1.0, 7), 7);
    }

    #[test]
    fn schedule_validation() {
        assert!(InqSchedule::new(vec![0.5, 0.5, 1.0], 1).is_err());
        assert!(InqSchedule::new(vec![0.5, 0.9], 1).is_err());
        assert!(InqSchedule::new(vec![], 1).is_err());
        assert!(InqSchedule::new(vec![0.0, 1.0], 1).is_err());
        assert_eq!(InqSchedule::four_step().fractions(), &[0.5, 0.75, 0.875, 1.0]);
    }

    fn tiny_model() -> ModelGraph<f32> {
        let mut m = ModelGraph::zeros(&[2], &[LayerSpec::Dense { units: 2 }, LayerSpec::SoftmaxOutput], 0).unwrap();
        m.param_mut(0).value.data_mut().copy_from_slice(&[0.9, 0.3, -0.6, 0.05]);
        m
    }

    #[test]
    fn quantize_group_records_code_and_clears_mask() {
        let mut m = tiny_model();
        let mut s = PartitionState::new(&m, 3, None).unwrap();
        assert_eq!((s.tensors[0].level_set.n1(), s.tensors[0].level_set.n2()), (0, -2));
        s.quantize_group(&mut m, 0, &[1]).unwrap();
        assert_eq!(m.param(0).value.data()[1], 0.25);
        assert_eq!(s.tensors[0].codes[1], QuantCode { negative: false, index: 3 });
        assert!(!s.tensors[0].free[1]);
        let before = s.clone();
        s.quantize_group(&mut m, 0, &[]).unwrap();
        assert_eq!(s, before);
        assert!(matches!(s.quantize_group(&mut m, 0, &[1]), Err(Error::Partition(_))));
        s.quantize_group(&mut m, 0, &[0, 2, 3]).unwrap();
        assert!(s.is_complete());
        assert_eq!(m.param(0).value.data(), &[1.0, 0.25, -0.5, 0.0]);
        s.verify(&m).unwrap();
    }

    #[test]
    fn freeze_mask_covers_weights_only() {
        let m = tiny_model();
        let s = PartitionState::new(&m, 4, None).unwrap();
        let mask = s.freeze_mask(&m);
        assert_eq!(mask.len(), 2);
        assert_eq!(mask[0], Some(vec![false; 4]));
        assert_eq!(mask[1], None);
    }

    #[test]
    fn one_shot_equals_elementwise_quantization() {
        let specs = [LayerSpec::Dense { units: 6 }, LayerSpec::Relu, LayerSpec::Dense { units: 3 }, LayerSpec::SoftmaxOutput];
        let mut m = ModelGraph::new(&[5], &specs, 11).unwrap();
        let orig = m.clone();
        let data = Dataset::new(Tensor::zeros(vec![2, 5]), vec![0, 1]).unwrap();
        let mut cfg = InqConfig::new(4);
        cfg.schedule = InqSchedule::one_shot();
        let (state, log) = inq_train(&mut m, &data, &cfg, None).unwrap();
        assert_eq!(log.len(), 1);
        for t in &state.tensors {
            let before = orig.param(t.param_id).value.data();
            let after = m.param(t.param_id).value.data();
            for (b, a) in before.iter().zip(after) {
                assert_eq!(t.level_set.quantize(*b).unwrap(), *a);
            }
        }
        // biases untouched
        assert_eq!(orig.param(1).value, m.param(1).value);
    }
}
