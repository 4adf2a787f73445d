//! Ensembles, disagreement-based uncertainty, representativeness selection
//! and the suggestive-annotation loop.
//!
//! Uncertainty of a sample is the across-member population variance of the
//! predicted probabilities, averaged over every output element.
//! Representativeness is greedy max-coverage: a candidate set `S` scores
//! `Σ_{x ∈ pool} max_{s ∈ S} cos(f(x), f(s))`, where `f` mean-pools the
//! activations feeding the first member's last parametric layer.

use crate::error::{Error, Result};
use crate::nncore::{predict, Dataset, ModelGraph, Tensor};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone)]
pub struct Ensemble {
    members: Vec<ModelGraph<f32>>,
}

impl Ensemble {
    pub fn new(members: Vec<ModelGraph<f32>>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::InvalidModel("ensemble needs at least one member".into()))?;
        for m in &members[1..] {
            if m.input_shape() != first.input_shape() || m.output_shape() != first.output_shape() {
                return Err(Error::Shape(format!(
                    "member {:?} -> {:?} incompatible with {:?} -> {:?}",
                    m.input_shape(),
                    m.output_shape(),
                    first.input_shape(),
                    first.output_shape()
                )));
            }
        }
        Ok(Ensemble { members })
    }

    pub fn members(&self) -> &[ModelGraph<f32>] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn member_outputs(&self, inputs: &Tensor<f32>, batch_size: usize) -> Result<Vec<Tensor<f32>>> {
        self.members.iter().map(|m| predict(m, inputs, batch_size)).collect()
    }

    /// Elementwise mean of the members' probability outputs.
    pub fn predict(&self, inputs: &Tensor<f32>, batch_size: usize) -> Result<Tensor<f32>> {
        let outs = self.member_outputs(inputs, batch_size)?;
        mean_outputs(&outs)
    }

    /// Uncertainty of every sample in `inputs`.
    pub fn uncertainty_scores(&self, inputs: &Tensor<f32>, batch_size: usize) -> Result<Vec<f64>> {
        if self.len() < 2 {
            return Err(Error::UncertaintyUndefined(self.len()));
        }
        let outs = self.member_outputs(inputs, batch_size)?;
        let n = inputs.shape()[0];
        let per = outs[0].len() / n.max(1);
        Ok((0..n)
            .map(|i| {
                let rows: Vec<&[f32]> = outs.iter().map(|o| &o.data()[i * per..(i + 1) * per]).collect();
                variance_score(&rows)
            })
            .collect())
    }

    /// Uncertainty of a single sample given as `[1, ...]` or without the batch axis.
    pub fn uncertainty_score(&self, sample: &Tensor<f32>) -> Result<f64> {
        let sample = if sample.shape() == self.members[0].input_shape() {
            let mut shape = vec![1];
            shape.extend_from_slice(sample.shape());
            sample.clone().reshape(shape)?
        } else {
            sample.clone()
        };
        Ok(self.uncertainty_scores(&sample, 1)?[0])
    }

    /// Representativeness descriptors from the first member.
    pub fn features(&self, inputs: &Tensor<f32>, batch_size: usize) -> Result<Vec<Vec<f32>>> {
        penultimate_features(&self.members[0], inputs, batch_size)
    }
}

pub fn mean_outputs(outs: &[Tensor<f32>]) -> Result<Tensor<f32>> {
    let first = outs.first().ok_or_else(|| Error::InvalidModel("no outputs to average".into()))?;
    if outs.iter().any(|o| o.shape() != first.shape()) {
        return Err(Error::Shape("member outputs differ in shape".into()));
    }
    let k = outs.len() as f32;
    let mut sum = vec![0.0f32; first.len()];
    for o in outs {
        for (s, v) in sum.iter_mut().zip(o.data()) {
            *s += v;
        }
    }
    Tensor::new(first.shape().to_vec(), sum.into_iter().map(|s| s / k).collect())
}

/// Mean over elements of the across-member population variance.
pub fn variance_score(member_rows: &[&[f32]]) -> f64 {
    let k = member_rows.len() as f64;
    let len = member_rows[0].len();
    if len == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for e in 0..len {
        let mean = member_rows.iter().map(|r| r[e] as f64).sum::<f64>() / k;
        total += member_rows.iter().map(|r| (r[e] as f64 - mean).powi(2)).sum::<f64>() / k;
    }
    total / len as f64
}

/// Mean-pooled input of the last parametric layer: channels for maps,
/// features for sequences, the vector itself otherwise.
pub fn penultimate_features(model: &ModelGraph<f32>, inputs: &Tensor<f32>, batch_size: usize) -> Result<Vec<Vec<f32>>> {
    let cut = model.last_parametric_layer().unwrap_or(model.layers().len());
    let n = inputs.shape()[0];
    let idx: Vec<usize> = (0..n).collect();
    let mut feats = Vec::with_capacity(n);
    for chunk in idx.chunks(batch_size.max(1)) {
        let acts = model.forward_until(&inputs.gather_rows(chunk), cut)?;
        let sample = &acts.shape()[1..];
        let per: usize = sample.iter().product();
        for b in 0..chunk.len() {
            let a = &acts.data()[b * per..(b + 1) * per];
            let f = match sample.len() {
                3 => {
                    let plane = sample[1] * sample[2];
                    (0..sample[0])
                        .map(|c| a[c * plane..(c + 1) * plane].iter().sum::<f32>() / plane as f32)
                        .collect()
                }
                2 => {
                    let (steps, width) = (sample[0], sample[1]);
                    (0..width)
                        .map(|j| (0..steps).map(|t| a[t * width + j]).sum::<f32>() / steps as f32)
                        .collect()
                }
                _ => a.to_vec(),
            };
            feats.push(f);
        }
    }
    Ok(feats)
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (*x as f64, *y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

/// Coverage objective of a chosen candidate set; an empty set scores 0.
pub fn coverage(chosen: &[&[f32]], pool: &[Vec<f32>]) -> f64 {
    pool.iter()
        .map(|x| chosen.iter().map(|s| cosine(x, s)).fold(0.0, f64::max))
        .sum()
}

/// Greedily picks `r` candidates maximising pool coverage. Returns candidate
/// indices in pick order; ties go to the lower index.
pub fn representative_select(candidates: &[Vec<f32>], pool: &[Vec<f32>], r: usize) -> Result<Vec<usize>> {
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    if r > candidates.len() {
        return Err(Error::Config(format!(
            "cannot select {r} of {} candidates",
            candidates.len()
        )));
    }
    let sim: Vec<Vec<f64>> = candidates
        .iter()
        .map(|c| pool.iter().map(|x| cosine(c, x)).collect())
        .collect();
    let mut cover = vec![0.0f64; pool.len()];
    let mut taken = vec![false; candidates.len()];
    let mut picked = Vec::with_capacity(r);
    for _ in 0..r {
        let mut best: Option<(usize, f64)> = None;
        for (c, row) in sim.iter().enumerate() {
            if taken[c] {
                continue;
            }
            let gain: f64 = row.iter().zip(&cover).map(|(s, cv)| s.max(*cv)).sum();
            if best.is_none_or(|(_, g)| gain > g) {
                best = Some((c, gain));
            }
        }
        let (c, _) = best.expect("r <= candidates");
        taken[c] = true;
        for (cv, s) in cover.iter_mut().zip(&sim[c]) {
            *cv = cv.max(*s);
        }
        picked.push(c);
    }
    Ok(picked)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestionConfig {
    /// Most-uncertain samples shortlisted per iteration.
    pub uncertainty_take: usize,
    /// Samples kept from the shortlist by representativeness.
    pub representative_take: usize,
    pub iterations: usize,
    /// Quantize suggestive members to this many bits.
    pub quantize_suggestors: Option<u32>,
    /// Retrain the suggestive ensemble every iteration (otherwise train once).
    pub retrain_every_iteration: bool,
    pub batch_size: usize,
}

impl SuggestionConfig {
    pub fn new(uncertainty_take: usize, representative_take: usize, iterations: usize) -> Self {
        SuggestionConfig {
            uncertainty_take,
            representative_take,
            iterations,
            quantize_suggestors: None,
            retrain_every_iteration: true,
            batch_size: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("suggestion needs at least one iteration".into()));
        }
        if self.representative_take == 0 || self.representative_take > self.uncertainty_take {
            return Err(Error::Config(format!(
                "need 0 < representative_take ({}) <= uncertainty_take ({})",
                self.representative_take, self.uncertainty_take
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestionStep {
    pub iteration: usize,
    pub labeled: usize,
    pub shortlist_mean_uncertainty: f64,
    pub chosen: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    /// Indices into the dataset, in the order they were suggested.
    pub suggested: Vec<usize>,
    /// The pool ran out before all iterations could take their full share.
    pub exhausted: bool,
    pub steps: Vec<SuggestionStep>,
}

/// Runs the suggestion loop over `pool` (indices into `data`).
///
/// Each iteration asks `trainer` for an ensemble fitted on `seed` plus
/// everything suggested so far, shortlists the most uncertain remaining
/// samples, keeps the most representative of those, and moves them into
/// the suggested set.
pub fn suggest_training_set<F>(
    data: &Dataset,
    seed: &[usize],
    pool: &[usize],
    cfg: &SuggestionConfig,
    mut trainer: F,
) -> Result<Suggestion>
where
    F: FnMut(&[usize], usize) -> Result<Ensemble>,
{
    cfg.validate()?;
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    let mut remaining: Vec<usize> = pool.iter().copied().filter(|i| !seed.contains(i)).collect();
    remaining.sort_unstable();
    remaining.dedup();
    let mut suggested: Vec<usize> = Vec::new();
    let mut steps = Vec::new();
    let mut exhausted = false;
    let mut ensemble: Option<Ensemble> = None;

    for it in 0..cfg.iterations {
        if remaining.is_empty() {
            exhausted = true;
            break;
        }
        if ensemble.is_none() || cfg.retrain_every_iteration {
            let labeled: Vec<usize> = seed.iter().chain(&suggested).copied().collect();
            ensemble = Some(trainer(&labeled, it)?);
        }
        let ens = ensemble.as_ref().unwrap();
        let inputs = data.inputs.gather_rows(&remaining);
        let scores = ens.uncertainty_scores(&inputs, cfg.batch_size)?;
        let mut order: Vec<usize> = (0..remaining.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        order.truncate(cfg.uncertainty_take.min(remaining.len()));

        let feats = ens.features(&inputs, cfg.batch_size)?;
        let shortlist: Vec<Vec<f32>> = order.iter().map(|&k| feats[k].clone()).collect();
        let take = cfg.representative_take.min(shortlist.len());
        if take < cfg.representative_take {
            exhausted = true;
        }
        let picked = representative_select(&shortlist, &feats, take)?;
        let chosen: Vec<usize> = picked.iter().map(|&p| remaining[order[p]]).collect();
        let mean_u = order.iter().map(|&k| scores[k]).sum::<f64>() / order.len() as f64;
        steps.push(SuggestionStep {
            iteration: it,
            labeled: seed.len() + suggested.len(),
            shortlist_mean_uncertainty: mean_u,
            chosen: chosen.clone(),
        });
        remaining.retain(|i| !chosen.contains(i));
        suggested.extend(chosen);
    }
    Ok(Suggestion {
        suggested,
        exhausted,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_of_two_distributions() {
        let a = Tensor::new(vec![1, 2], vec![0.8, 0.2]).unwrap();
        let b = Tensor::new(vec![1, 2], vec![0.6, 0.4]).unwrap();
        let m = mean_outputs(&[a, b]).unwrap();
        assert!((m.data()[0] - 0.7).abs() < 1e-7 && (m.data()[1] - 0.3).abs() < 1e-7);
    }

    #[test]
    fn variance_examples() {
        assert_eq!(variance_score(&[&[1.0, 0.0], &[0.0, 1.0]]), 0.25);
        assert_eq!(variance_score(&[&[0.3, 0.7], &[0.3, 0.7]]), 0.0);
        let a: &[f32] = &[0.9, 0.1];
        let b: &[f32] = &[0.2, 0.8];
        let c: &[f32] = &[0.5, 0.5];
        assert_eq!(variance_score(&[a, b, c]), variance_score(&[c, a, b]));
    }

    #[test]
    fn exact_match_chosen_first() {
        let pool = vec![vec![1.0, 2.0, 0.0]];
        let cands = vec![vec![0.0, 1.0, 1.0], vec![2.0, 4.0, 0.0], vec![1.0, 0.0, 0.0]];
        assert_eq!(representative_select(&cands, &pool, 1).unwrap(), vec![1]);
    }

    #[test]
    fn select_all_and_errors() {
        let cands = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
        let mut all = representative_select(&cands, &cands, 3).unwrap();
        all.sort();
        assert_eq!(all, vec![0, 1, 2]);
        assert!(matches!(representative_select(&cands, &[], 1), Err(Error::EmptyPool)));
        assert!(representative_select(&cands, &cands, 4).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(SuggestionConfig::new(4, 8, 1).validate().is_err());
        assert!(SuggestionConfig::new(4, 2, 0).validate().is_err());
        assert!(SuggestionConfig::new(16, 8, 120).validate().is_ok());
    }
}
