use super::sqw::PackedModel;
use serde::{Deserialize, Serialize};
use std::fmt;

/// Storage cost of a packed model compared with an all-float32 copy.
///
/// The headline `reduction_ratio` covers packed weight tensors only; the
/// whole-model figures also count float32 tensors (biases, unquantized
/// weights) at four bytes per value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryReport {
    pub packed_weights: usize,
    pub float_bytes: usize,
    pub packed_bytes: usize,
    pub whole_model_float_bytes: usize,
    pub whole_model_bytes: usize,
    pub reduction_ratio: f64,
    pub whole_model_ratio: f64,
}

pub fn memory_report(model: &PackedModel) -> MemoryReport {
    let mut packed_weights = 0;
    let mut packed_bytes = 0;
    let mut other_bytes = 0;
    for t in &model.tensors {
        if t.is_packed() {
            packed_weights += t.numel();
            packed_bytes += t.body_bytes();
        } else {
            other_bytes += t.body_bytes();
        }
    }
    let float_bytes = 4 * packed_weights;
    let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
    MemoryReport {
        packed_weights,
        float_bytes,
        packed_bytes,
        whole_model_float_bytes: float_bytes + other_bytes,
        whole_model_bytes: packed_bytes + other_bytes,
        reduction_ratio: ratio(float_bytes, packed_bytes),
        whole_model_ratio: ratio(float_bytes + other_bytes, packed_bytes + other_bytes),
    }
}

impl fmt::Display for MemoryReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "weights: {} values, {} B float32 -> {} B packed ({:.1}x)",
            self.packed_weights, self.float_bytes, self.packed_bytes, self.reduction_ratio
        )?;
        write!(
            f,
            "whole model: {} B -> {} B ({:.2}x)",
            self.whole_model_float_bytes, self.whole_model_bytes, self.whole_model_ratio
        )
    }
}
