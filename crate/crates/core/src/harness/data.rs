//! Deterministic synthetic datasets: textured gland images with masks,
//! noisy shape images, and frame sequences from Gaussian emitters.

use super::config::{DatasetParams, Task};
use super::idx;
use crate::error::{Error, Result};
use crate::nncore::{Dataset, Tensor};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use std::f32::consts::PI;

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Option<Dataset>,
    pub test: Dataset,
}

pub const SHAPE_NAMES: [&str; 10] = [
    "disk", "ring", "square", "frame", "hbar", "vbar", "plus", "cross", "triangle", "dots",
];

fn in_shape(class: usize, u: f32, v: f32) -> bool {
    let r2 = u * u + v * v;
    let (au, av) = (u.abs(), v.abs());
    match class {
        0 => r2 <= 1.0,
        1 => (0.3..=1.0).contains(&r2),
        2 => au <= 0.8 && av <= 0.8,
        3 => au.max(av) <= 0.85 && au.max(av) >= 0.5,
        4 => av <= 0.3 && au <= 1.0,
        5 => au <= 0.3 && av <= 1.0,
        6 => (au <= 0.25 && av <= 1.0) || (av <= 0.25 && au <= 1.0),
        7 => ((u - v).abs() <= 0.35 || (u + v).abs() <= 0.35) && au <= 1.0 && av <= 1.0,
        8 => (-0.8..=0.8).contains(&v) && au <= (v + 0.8) / 1.6,
        9 => (u - 0.55).powi(2) + v * v <= 0.16 || (u + 0.55).powi(2) + v * v <= 0.16,
        _ => false,
    }
}

fn shape_image(class: usize, s: usize, noise: &Normal<f32>, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let sf = s as f32;
    let radius = rng.gen_range(sf * 0.22..sf * 0.36);
    let cx = sf / 2.0 + rng.gen_range(-sf / 7.0..sf / 7.0);
    let cy = sf / 2.0 + rng.gen_range(-sf / 7.0..sf / 7.0);
    let fg = rng.gen_range(0.55f32..1.0);
    let bg = rng.gen_range(0.0f32..0.25);
    let mut img = Vec::with_capacity(s * s);
    for y in 0..s {
        for x in 0..s {
            let u = (x as f32 + 0.5 - cx) / radius;
            let v = (y as f32 + 0.5 - cy) / radius;
            let base = if in_shape(class, u, v) { fg } else { bg };
            img.push(base + noise.sample(rng));
        }
    }
    img
}

fn classification(p: &DatasetParams, rng: &mut ChaCha8Rng) -> Result<(Tensor<f32>, Vec<usize>)> {
    let s = p.image_size;
    let noise = Normal::new(0.0, p.noise).map_err(|e| Error::Config(e.to_string()))?;
    let n = p.total();
    let mut data = Vec::with_capacity(n * s * s);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let class = rng.gen_range(0..p.classes);
        data.extend(shape_image(class, s, &noise, rng));
        labels.push(class);
    }
    for label in labels.iter_mut().take(p.train) {
        if rng.gen_bool(p.label_noise) {
            *label = rng.gen_range(0..p.classes);
        }
    }
    Ok((Tensor::new(vec![n, 1, s, s], data)?, labels))
}

struct Gland {
    cx: f32,
    cy: f32,
    a: f32,
    b: f32,
    cos: f32,
    sin: f32,
}

impl Gland {
    /// Normalised elliptical radius; the gland is `r <= 1`.
    fn radius(&self, x: f32, y: f32) -> f32 {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (dx * self.cos + dy * self.sin) / self.a;
        let v = (-dx * self.sin + dy * self.cos) / self.b;
        (u * u + v * v).sqrt()
    }
}

/// One `s×s` gland image and its mask. Contrast varies per image, so some
/// images are much harder than others.
pub fn gland_image(s: usize, noise: f32, empty_fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<f32>, Vec<usize>) {
    let sf = s as f32;
    let count = if rng.gen_bool(empty_fraction) { 0 } else { rng.gen_range(1..=3) };
    // semi-axes in [2.5, s/5); tiny images shrink the lower bound
    let lo = if sf / 5.0 > 2.5 { 2.5 } else { sf / 8.0 };
    let glands: Vec<Gland> = (0..count)
        .map(|_| {
            let a = rng.gen_range(lo..sf / 5.0);
            let b = rng.gen_range(lo..sf / 5.0);
            let m = a.max(b);
            let theta = rng.gen_range(0.0..PI);
            Gland {
                cx: rng.gen_range(m..sf - m),
                cy: rng.gen_range(m..sf - m),
                a,
                b,
                cos: theta.cos(),
                sin: theta.sin(),
            }
        })
        .collect();
    let contrast = rng.gen_range(0.12f32..0.6);
    let (f1, f2) = (rng.gen_range(0.3f32..1.2), rng.gen_range(0.3f32..1.2));
    let (p1, p2) = (rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..2.0 * PI));
    let tex = rng.gen_range(1.5f32..2.5);
    let mut img = Vec::with_capacity(s * s);
    let mut mask = Vec::with_capacity(s * s);
    for y in 0..s {
        for x in 0..s {
            let (xf, yf) = (x as f32 + 0.5, y as f32 + 0.5);
            let bg = 0.35 + 0.1 * (f1 * xf + p1).sin() * (f2 * yf + p2).sin();
            let r = glands.iter().map(|g| g.radius(xf, yf)).fold(f32::INFINITY, f32::min);
            let inside = r <= 1.0;
            let value = if inside {
                let texture = 0.15 * (tex * xf).sin() * (tex * yf).cos();
                if r > 0.75 {
                    bg + 0.4 * contrast
                } else {
                    bg + contrast * (1.0 + texture)
                }
            } else {
                bg
            };
            let z: f32 = StandardNormal.sample(rng);
            img.push(value + noise * z);
            mask.push(inside as usize);
        }
    }
    (img, mask)
}

fn segmentation(p: &DatasetParams, rng: &mut ChaCha8Rng) -> Result<(Tensor<f32>, Vec<usize>)> {
    let s = p.image_size;
    let n = p.total();
    let mut data = Vec::with_capacity(n * s * s);
    let mut masks = Vec::with_capacity(n * s * s);
    for _ in 0..n {
        let (img, mask) = gland_image(s, p.noise, p.empty_fraction, rng);
        data.extend(img);
        masks.extend(mask);
    }
    Ok((Tensor::new(vec![n, 1, s, s], data)?, masks))
}

fn sequences(p: &DatasetParams, rng: &mut ChaCha8Rng) -> Result<(Tensor<f32>, Vec<usize>)> {
    let (c, t, f) = (p.classes, p.seq_len, p.features);
    let means: Vec<Vec<f32>> = (0..c)
        .map(|_| (0..f).map(|_| StandardNormal.sample(rng)).collect())
        .collect();
    let n = p.total();
    let mut data = Vec::with_capacity(n * t * f);
    let mut labels = Vec::with_capacity(n * t);
    for _ in 0..n {
        let mut class = rng.gen_range(0..c);
        for step in 0..t {
            if step > 0 && !rng.gen_bool(p.stay_probability) {
                class = rng.gen_range(0..c);
            }
            for mean in &means[class] {
                let z: f32 = StandardNormal.sample(rng);
                data.push(mean + p.noise * z);
            }
            labels.push(class);
        }
    }
    Ok((Tensor::new(vec![n, t, f], data)?, labels))
}

fn split(inputs: Tensor<f32>, targets: Vec<usize>, p: &DatasetParams) -> Result<Splits> {
    let all = Dataset::new(inputs, targets)?;
    let range = |a: usize, b: usize| (a..b).collect::<Vec<_>>();
    let val = (p.val > 0).then(|| all.subset(&range(p.train, p.train + p.val)));
    Ok(Splits {
        train: all.subset(&range(0, p.train)),
        val,
        test: all.subset(&range(p.train + p.val, p.total())),
    })
}

/// Train/val/test splits for `task`, fully determined by `seed` and `params`.
pub fn generate_dataset(task: Task, params: &DatasetParams, seed: u64) -> Result<Splits> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (x, y) = match task {
        Task::Cls => classification(params, &mut rng)?,
        Task::Seg => segmentation(params, &mut rng)?,
        Task::Asr => sequences(params, &mut rng)?,
    };
    split(x, y, params)
}

/// Splits for an experiment: IDX files when configured, synthetic otherwise.
pub fn load_dataset(task: Task, params: &DatasetParams) -> Result<Splits> {
    match (&params.idx, task) {
        (Some(src), Task::Cls) => {
            let train = idx::load_classification(&src.train_images, &src.train_labels)?;
            let test = idx::load_classification(&src.test_images, &src.test_labels)?;
            let n = train.len();
            let val_n = params.val.min(n.saturating_sub(1));
            let val = (val_n > 0).then(|| train.subset(&((n - val_n)..n).collect::<Vec<_>>()));
            let train = train.subset(&(0..n - val_n).collect::<Vec<_>>());
            Ok(Splits { train, val, test })
        }
        (Some(_), _) => Err(Error::Config("IDX files are only supported for the cls task".into())),
        (None, _) => generate_dataset(task, params, params.seed),
    }
}
