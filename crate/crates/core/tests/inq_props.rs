mod common;

use inqkit::inq::{
    inq_train, partition_layer, target_count, InqConfig, InqSchedule, PartitionState, PartitionStrategy,
};
use inqkit::nncore::{LayerSpec, ModelGraph, OptimizerConfig};
use inqkit::LevelSet;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::cell::RefCell;

fn small_model(seed: u64, hidden: usize) -> ModelGraph<f32> {
    ModelGraph::new(
        &[6],
        &[
            LayerSpec::Dense { units: hidden },
            LayerSpec::Relu,
            LayerSpec::Dense { units: 3 },
            LayerSpec::SoftmaxOutput,
        ],
        seed,
    )
    .unwrap()
}

fn config(bits: u32, strategy: PartitionStrategy, epochs: usize, seed: u64) -> InqConfig {
    InqConfig {
        schedule: InqSchedule::new(vec![0.5, 0.75, 0.875, 1.0], epochs).unwrap(),
        strategy,
        optimizer: OptimizerConfig { learning_rate: 0.05, ..OptimizerConfig::default() },
        batch_size: 8,
        seed,
        ..InqConfig::new(bits)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn schedule_invariants_hold_at_every_step(
        seed in any::<u64>(),
        hidden in 1usize..=9,
        bits in 2u32..=9,
        random in any::<bool>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = common::toy_dataset(&mut rng, 24, 6, 3);
        let mut model = small_model(seed, hidden);
        let initial = model.clone();
        let strategy = if random { PartitionStrategy::Random } else { PartitionStrategy::Magnitude };
        let snapshots = RefCell::new(Vec::new());
        let record = |m: &ModelGraph<f32>| {
            snapshots.borrow_mut().push(m.clone());
            Ok(0.0)
        };
        let (state, log) = inq_train(&mut model, &data, &config(bits, strategy, 1, seed), Some(&record)).unwrap();
        let snapshots = snapshots.into_inner();
        prop_assert_eq!(log.len(), 4);

        // level sets come from the initial float weights
        for t in &state.tensors {
            let expect = LevelSet::for_weights(initial.param(t.param_id).value.data(), bits, None).unwrap();
            prop_assert_eq!(t.level_set, expect);
        }
        // per-step counts are round(f·N), within one weight of f·N
        for (step, entry) in log.iter().enumerate() {
            let f = [0.5, 0.75, 0.875, 1.0][step];
            prop_assert_eq!(entry.target_fraction, f);
            for &(q, n) in &entry.tensor_counts {
                prop_assert_eq!(q, target_count(f, n));
                prop_assert!((q as f64 - f * n as f64).abs() <= 1.0);
            }
        }
        // a weight that is quantized at one snapshot never moves again
        for t in &state.tensors {
            let last = snapshots.last().unwrap().param(t.param_id).value.data();
            for snap in &snapshots {
                let w = snap.param(t.param_id).value.data();
                for i in 0..w.len() {
                    if t.level_set.quantize(w[i]).unwrap() == w[i] && w[i].to_bits() != last[i].to_bits() {
                        // only a free weight may pass through a level by chance
                        let later_free = snapshots.iter().any(|s| s.param(t.param_id).value.data()[i].to_bits() != w[i].to_bits());
                        prop_assert!(later_free);
                    }
                }
            }
        }
        // final model: complete, every weight a level, codes decode to it
        prop_assert!(state.is_complete());
        state.verify(&model).unwrap();
        for t in &state.tensors {
            for (i, &w) in model.param(t.param_id).value.data().iter().enumerate() {
                prop_assert_eq!(t.level_set.decode(t.codes[i]).unwrap().to_bits(), w.to_bits());
                prop_assert_eq!(t.level_set.quantize(w).unwrap().to_bits(), w.to_bits());
            }
        }
    }

    #[test]
    fn manual_loop_keeps_groups_disjoint_and_frozen(seed in any::<u64>(), bits in 3u32..=8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = common::toy_dataset(&mut rng, 24, 6, 3);
        let mut model = small_model(seed, 5);
        let mut state = PartitionState::new(&model, bits, None).unwrap();
        let mut opt = inqkit::nncore::OptimizerState::new(
            OptimizerConfig { learning_rate: 0.05, ..OptimizerConfig::default() },
            &model,
        ).unwrap();
        for f in [0.5, 0.75, 0.875, 1.0] {
            for t in 0..state.tensors.len() {
                let w = model.param(state.tensors[t].param_id).value.data().to_vec();
                let free = state.tensors[t].free.clone();
                let picked = partition_layer(&w, &free, f, PartitionStrategy::Magnitude, &mut rng).unwrap();
                // picked ⊆ free, and magnitude-first among the free weights
                prop_assert!(picked.iter().all(|&i| free[i]));
                let min_picked = picked.iter().map(|&i| w[i].abs()).fold(f32::INFINITY, f32::min);
                for i in 0..w.len() {
                    if free[i] && !picked.contains(&i) {
                        prop_assert!(w[i].abs() <= min_picked);
                    }
                }
                state.quantize_group(&mut model, t, &picked).unwrap();
                // re-quantizing any picked position is a disjointness violation
                if let Some(&i) = picked.first() {
                    prop_assert!(state.quantize_group(&mut model, t, &[i]).is_err());
                }
            }
            let before = model.clone();
            let mask = state.freeze_mask(&model);
            inqkit::nncore::train_epochs(&mut model, &mut opt, &data, 1, 8, Some(&mask), &mut rng).unwrap();
            for t in &state.tensors {
                let a = before.param(t.param_id).value.data();
                let b = model.param(t.param_id).value.data();
                for i in 0..a.len() {
                    if !t.free[i] {
                        prop_assert_eq!(a[i].to_bits(), b[i].to_bits());
                    }
                }
            }
            state.verify(&model).unwrap();
        }
        prop_assert!(state.is_complete());
    }
}

#[test]
fn magnitude_order_without_retraining() {
    let mut model = small_model(3, 8);
    let initial = model.clone();
    let data = common::toy_dataset(&mut ChaCha8Rng::seed_from_u64(3), 12, 6, 3);
    let steps = RefCell::new(Vec::new());
    let record = |m: &ModelGraph<f32>| {
        steps.borrow_mut().push(m.clone());
        Ok(0.0)
    };
    let (state, _) = inq_train(&mut model, &data, &config(5, PartitionStrategy::Magnitude, 0, 3), Some(&record)).unwrap();
    let steps = steps.into_inner();
    for t in &state.tensors {
        let w0 = initial.param(t.param_id).value.data();
        // without retraining, a weight changes exactly when it is quantized
        let movable: Vec<usize> = (0..w0.len()).filter(|&i| t.level_set.quantize(w0[i]).unwrap() != w0[i]).collect();
        for snap in &steps {
            let w = snap.param(t.param_id).value.data();
            let (done, open): (Vec<usize>, Vec<usize>) = movable.iter().partition(|&&i| w[i] != w0[i]);
            for &i in &done {
                for &j in &open {
                    assert!(w0[i].abs() >= w0[j].abs(), "{}: {i} before {j}", t.name);
                }
            }
        }
    }
}
