mod common;

use inqkit::ensemble::{coverage, representative_select, suggest_training_set, Ensemble, SuggestionConfig};
use inqkit::harness::{generate_dataset, quantize_model, train_float, ExperimentConfig, Task};
use inqkit::nncore::{LayerSpec, ModelGraph};
use inqkit::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn feature_set(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f32>> {
    (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).collect()
}

fn subsets(n: usize, r: usize) -> Vec<Vec<usize>> {
    (0u32..1 << n)
        .filter(|m| m.count_ones() as usize == r)
        .map(|m| (0..n).filter(|i| m >> i & 1 == 1).collect())
        .collect()
}

fn objective(cands: &[Vec<f32>], pool: &[Vec<f32>], pick: &[usize]) -> f64 {
    let chosen: Vec<&[f32]> = pick.iter().map(|&i| cands[i].as_slice()).collect();
    coverage(&chosen, pool)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn greedy_is_near_optimal_and_monotone(seed in any::<u64>(), n in 1usize..=8, d in 1usize..=5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cands = feature_set(&mut rng, n, d);
        let pool = feature_set(&mut rng, 12, d);
        let mut last = 0.0;
        for r in 1..=n {
            let pick = representative_select(&cands, &pool, r).unwrap();
            let mut uniq = pick.clone();
            uniq.sort();
            uniq.dedup();
            prop_assert_eq!(uniq.len(), r);
            let got = objective(&cands, &pool, &pick);
            let best = subsets(n, r).iter().map(|s| objective(&cands, &pool, s)).fold(0.0, f64::max);
            // greedy on a monotone submodular objective
            prop_assert!(got >= (1.0 - (-1.0f64).exp()) * best - 1e-9);
            prop_assert!(got >= last - 1e-12);
            last = got;
        }
    }
}

#[test]
fn two_clusters_get_one_pick_each() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let jitter = |rng: &mut ChaCha8Rng, c: [f32; 2]| vec![c[0] + rng.gen_range(-0.05..0.05), c[1] + rng.gen_range(-0.05..0.05)];
    let pool: Vec<Vec<f32>> = (0..20).map(|i| jitter(&mut rng, if i % 2 == 0 { [1.0, 0.0] } else { [0.0, 1.0] })).collect();
    let cands: Vec<Vec<f32>> = (0..6).map(|i| jitter(&mut rng, if i < 4 { [1.0, 0.0] } else { [0.0, 1.0] })).collect();
    let pick = representative_select(&cands, &pool, 2).unwrap();
    let best = subsets(6, 2)
        .into_iter()
        .max_by(|a, b| objective(&cands, &pool, a).total_cmp(&objective(&cands, &pool, b)))
        .unwrap();
    let mut sorted = pick.clone();
    sorted.sort();
    assert_eq!(sorted, best);
    assert!(pick.iter().any(|&i| i < 4) && pick.iter().any(|&i| i >= 4));
}

fn untrained_ensemble(k: usize, offset: u64) -> Ensemble {
    Ensemble::new(
        (0..k)
            .map(|m| {
                ModelGraph::new(
                    &[4],
                    &[LayerSpec::Dense { units: 6 }, LayerSpec::Relu, LayerSpec::Dense { units: 3 }, LayerSpec::SoftmaxOutput],
                    offset * 100 + m as u64,
                )
                .unwrap()
            })
            .collect(),
    )
    .unwrap()
}

#[test]
fn ensemble_outputs_are_distributions() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = common::random_input(&mut rng, &[4], 10);
    let ens = untrained_ensemble(3, 0);
    let p = ens.predict(&x, 4).unwrap();
    for row in p.data().chunks(3) {
        assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-5);
    }
    let single = untrained_ensemble(1, 0);
    let direct = single.members()[0].forward(&x).unwrap();
    assert_eq!(single.predict(&x, 4).unwrap(), direct);
    assert!(matches!(single.uncertainty_scores(&x, 4), Err(Error::UncertaintyUndefined(1))));
    assert!(ens.uncertainty_scores(&x, 4).unwrap().iter().all(|u| *u >= 0.0));
}

fn blob_data(n: usize) -> inqkit::nncore::Dataset {
    common::toy_dataset(&mut ChaCha8Rng::seed_from_u64(3), n, 4, 3)
}

#[test]
fn one_round_over_the_whole_pool_takes_it_all() {
    let data = blob_data(30);
    let pool: Vec<usize> = (0..30).collect();
    let s = suggest_training_set(&data, &[], &pool, &SuggestionConfig::new(30, 30, 1), |_, it| Ok(untrained_ensemble(3, it as u64)))
        .unwrap();
    let mut got = s.suggested.clone();
    got.sort();
    assert_eq!(got, pool);
    assert!(!s.exhausted);
}

#[test]
fn long_run_suggests_u_times_r() {
    let data = blob_data(1200);
    let seed: Vec<usize> = (0..16).collect();
    let pool: Vec<usize> = (0..1200).collect();
    let mut calls = 0;
    let s = suggest_training_set(&data, &seed, &pool, &SuggestionConfig::new(16, 8, 120), |labeled, it| {
        assert_eq!(labeled.len(), 16 + 8 * it);
        calls += 1;
        Ok(untrained_ensemble(3, it as u64))
    })
    .unwrap();
    assert_eq!(calls, 120);
    assert_eq!(s.suggested.len(), 960);
    assert!(!s.exhausted);
    let mut uniq = s.suggested.clone();
    uniq.sort();
    uniq.dedup();
    assert_eq!(uniq.len(), 960);
    assert!(uniq.iter().all(|i| !seed.contains(i) && pool.contains(i)));
}

#[test]
fn small_pool_is_exhausted() {
    let data = blob_data(40);
    let pool: Vec<usize> = (0..40).collect();
    let s = suggest_training_set(&data, &[0, 1], &pool, &SuggestionConfig::new(16, 8, 10), |_, it| Ok(untrained_ensemble(2, it as u64)))
        .unwrap();
    assert!(s.exhausted);
    assert_eq!(s.suggested.len(), 38);
}

#[test]
fn quantized_members_differ_pairwise() {
    let mut cfg = ExperimentConfig::for_task(Task::Cls);
    let dp = cfg.dataset_mut();
    dp.train = 60;
    dp.val = 0;
    dp.test = 10;
    dp.image_size = 8;
    cfg.inq.epochs_per_step = 1;
    let data = generate_dataset(Task::Cls, cfg.dataset(), 5).unwrap();
    let members: Vec<ModelGraph<f32>> = (0..3)
        .map(|m| {
            let s = 5000 + m;
            let (f, _) = train_float(&cfg, cfg.model_size, &data.train, s, 1).unwrap();
            quantize_model(&cfg, &f, &data.train, 4, s).unwrap().0
        })
        .collect();
    for a in 0..3 {
        for b in a + 1..3 {
            let wa: Vec<u32> = members[a].params().flat_map(|(_, p)| p.value.data().to_vec()).map(f32::to_bits).collect();
            let wb: Vec<u32> = members[b].params().flat_map(|(_, p)| p.value.data().to_vec()).map(f32::to_bits).collect();
            assert_ne!(wa, wb, "members {a} and {b}");
        }
    }
}
