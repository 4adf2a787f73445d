//! Segmentation overlap metrics and classification error rates. Scores that
//! feed result tables are percentages.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dice {
    pub value: f64,
    /// Both masks were empty; `value` is then 1.0 by convention.
    pub both_empty: bool,
}

/// `2|A∩B| / (|A| + |B|)` in `[0, 1]`.
pub fn dice(pred: &[bool], truth: &[bool]) -> Result<Dice> {
    if pred.len() != truth.len() {
        return Err(Error::Metric(format!("mask sizes differ: {} vs {}", pred.len(), truth.len())));
    }
    let a = pred.iter().filter(|&&p| p).count();
    let b = truth.iter().filter(|&&t| t).count();
    if a + b == 0 {
        return Ok(Dice { value: 1.0, both_empty: true });
    }
    let inter = pred.iter().zip(truth).filter(|(&p, &t)| p && t).count();
    Ok(Dice {
        value: 2.0 * inter as f64 / (a + b) as f64,
        both_empty: false,
    })
}

/// 4-connected foreground components of an `h×w` mask, each as sorted pixel
/// indices, in raster order of their first pixel.
pub fn connected_components(mask: &[bool], h: usize, w: usize) -> Vec<Vec<usize>> {
    assert_eq!(mask.len(), h * w);
    let mut label = vec![usize::MAX; mask.len()];
    let mut comps = Vec::new();
    let mut stack = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || label[start] != usize::MAX {
            continue;
        }
        let id = comps.len();
        let mut comp = Vec::new();
        label[start] = id;
        stack.push(start);
        while let Some(p) = stack.pop() {
            comp.push(p);
            let (r, c) = (p / w, p % w);
            let mut visit = |q: usize| {
                if mask[q] && label[q] == usize::MAX {
                    label[q] = id;
                    stack.push(q);
                }
            };
            if r > 0 {
                visit(p - w);
            }
            if r + 1 < h {
                visit(p + w);
            }
            if c > 0 {
                visit(p - 1);
            }
            if c + 1 < w {
                visit(p + 1);
            }
        }
        comp.sort_unstable();
        comps.push(comp);
    }
    comps
}

fn iou(a: &[usize], b: &[usize]) -> f64 {
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    inter as f64 / (a.len() + b.len() - inter) as f64
}

/// Object-level F1 in `[0, 1]`. Pairs are matched greedily by descending
/// IoU; a match with IoU > 0.5 is a true positive. No objects on either
/// side scores 1.0.
pub fn object_f1(pred_objects: &[Vec<usize>], true_objects: &[Vec<usize>]) -> f64 {
    if pred_objects.is_empty() && true_objects.is_empty() {
        return 1.0;
    }
    let mut pairs = Vec::new();
    for (i, p) in pred_objects.iter().enumerate() {
        for (j, t) in true_objects.iter().enumerate() {
            let v = iou(p, t);
            if v > 0.5 {
                pairs.push((v, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let mut used_p = vec![false; pred_objects.len()];
    let mut used_t = vec![false; true_objects.len()];
    let mut tp = 0usize;
    for (_, i, j) in pairs {
        if !used_p[i] && !used_t[j] {
            used_p[i] = true;
            used_t[j] = true;
            tp += 1;
        }
    }
    2.0 * tp as f64 / (pred_objects.len() + true_objects.len()) as f64
}

pub fn object_f1_masks(pred: &[bool], truth: &[bool], h: usize, w: usize) -> f64 {
    object_f1(&connected_components(pred, h, w), &connected_components(truth, h, w))
}

pub fn seg_avg(dice: f64, f1: f64) -> f64 {
    (dice + f1) / 2.0
}

fn error_rate(preds: &[usize], labels: &[usize]) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::Metric(format!("{} predictions for {} labels", preds.len(), labels.len())));
    }
    if preds.is_empty() {
        return Err(Error::Metric("empty input".into()));
    }
    let wrong = preds.iter().zip(labels).filter(|(p, l)| p != l).count();
    Ok(100.0 * wrong as f64 / preds.len() as f64)
}

/// Percentage of samples whose predicted class differs from the label.
pub fn top1_error(preds: &[usize], labels: &[usize]) -> Result<f64> {
    error_rate(preds, labels)
}

/// Percentage of misclassified frames, pooled over all sequences.
pub fn frame_error_rate(preds: &[usize], labels: &[usize]) -> Result<f64> {
    error_rate(preds, labels)
}

/// Per-image segmentation scores in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegScores {
    pub dice: f64,
    pub object_f1: f64,
    pub seg_avg: f64,
    /// Images where both masks were empty.
    pub empty_images: usize,
}

/// Mean per-image dice and object F1 over `n` label maps of `h×w`, with
/// class 0 as background.
pub fn segmentation_scores(pred: &[usize], truth: &[usize], n: usize, h: usize, w: usize) -> Result<SegScores> {
    if pred.len() != truth.len() || pred.len() != n * h * w || n == 0 {
        return Err(Error::Metric(format!(
            "expected {n} maps of {h}x{w}, got {} predictions and {} labels",
            pred.len(),
            truth.len()
        )));
    }
    let (mut d, mut f, mut empty) = (0.0, 0.0, 0);
    for i in 0..n {
        let p: Vec<bool> = pred[i * h * w..(i + 1) * h * w].iter().map(|&c| c != 0).collect();
        let t: Vec<bool> = truth[i * h * w..(i + 1) * h * w].iter().map(|&c| c != 0).collect();
        let di = dice(&p, &t)?;
        empty += di.both_empty as usize;
        d += di.value;
        f += object_f1_masks(&p, &t, h, w);
    }
    let (dice, object_f1) = (100.0 * d / n as f64, 100.0 * f / n as f64);
    Ok(SegScores {
        dice,
        object_f1,
        seg_avg: seg_avg(dice, object_f1),
        empty_images: empty,
    })
}
