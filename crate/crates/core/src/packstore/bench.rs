use super::shiftadd::ShiftAddModel;
use super::sqw::PackedModel;
use crate::error::{Error, Result};
use crate::nncore::{ModelGraph, Tensor};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::time::Instant;

/// Wall-clock comparison of the float-multiply and shift-add kernels.
/// Purely informational: no speedup is expected on general-purpose CPUs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub repetitions: usize,
    pub batch: usize,
    pub multiply_median_ns: u128,
    pub shiftadd_median_ns: u128,
    /// `multiply / shift-add`; above 1 means shift-add was faster.
    pub ratio: f64,
    pub skip_rate: f64,
}

fn median(mut v: Vec<u128>) -> u128 {
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2
    }
}

pub fn bench(template: &ModelGraph<f32>, packed: &PackedModel, batch: &Tensor<f32>, repetitions: usize) -> Result<BenchReport> {
    if repetitions == 0 {
        return Err(Error::Config("repetitions must be >= 1".into()));
    }
    let shift = ShiftAddModel::from_template(template, packed)?;
    let mut dense = template.clone();
    packed.load_into(&mut dense)?;

    let mut mul_times = Vec::with_capacity(repetitions);
    let mut shift_times = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let t = Instant::now();
        std::hint::black_box(dense.forward(batch)?);
        mul_times.push(t.elapsed().as_nanos());
        let t = Instant::now();
        std::hint::black_box(shift.forward(batch)?);
        shift_times.push(t.elapsed().as_nanos());
    }
    let multiply_median_ns = median(mul_times);
    let shiftadd_median_ns = median(shift_times);
    Ok(BenchReport {
        repetitions,
        batch: batch.shape()[0],
        multiply_median_ns,
        shiftadd_median_ns,
        ratio: multiply_median_ns as f64 / shiftadd_median_ns.max(1) as f64,
        skip_rate: shift.skip_rate(),
    })
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "batch {} x {} reps: multiply median {:.3} ms, shift-add median {:.3} ms, ratio {:.2}x, zero-skip {:.1}%",
            self.batch,
            self.repetitions,
            self.multiply_median_ns as f64 / 1e6,
            self.shiftadd_median_ns as f64 / 1e6,
            self.ratio,
            100.0 * self.skip_rate
        )
    }
}
