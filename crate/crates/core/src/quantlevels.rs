//! Power-of-two level sets and the per-value quantization rule.
//!
//! A [`LevelSet`] with bit width `b` holds the values `{±2^n1, …, ±2^n2} ∪ {0}`.
//! A stored code spends one bit on the sign and `b − 1` bits on a magnitude
//! index, where index 0 is zero and index `i ≥ 1` is the exponent
//! `n1 − (i − 1)`. That leaves `2^(b−1) − 1` exponents, so `n2` follows from
//! `n1` and `b`.
//!
//! A magnitude `|w|` rounds to `2^p` for the unique `p` with
//! `3·2^(p−2) ≤ |w| < 3·2^(p−1)`. Values at or above `3·2^(n1−1)` clamp to
//! `2^n1`, values below `3·2^(n2−2)` become zero. The interval rule is not
//! nearest rounding near zero: the cut-off sits at three quarters of the
//! smallest level rather than at half of it.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

pub const MIN_BIT_WIDTH: u32 = 2;
pub const MAX_BIT_WIDTH: u32 = 16;

/// Exponent range of `f32` powers of two, subnormals included.
const F32_MIN_POW2: i32 = -149;
const F32_MAX_POW2: i32 = 127;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LevelSet {
    bit_width: u8,
    n1: i32,
    n2: i32,
}

/// Sign plus magnitude index of one quantized weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct QuantCode {
    pub negative: bool,
    pub index: u16,
}

impl QuantCode {
    pub const ZERO: QuantCode = QuantCode {
        negative: false,
        index: 0,
    };

    pub fn is_zero(self) -> bool {
        self.index == 0
    }

    /// Packs into the low `bit_width` bits: sign in the top bit, index below.
    pub fn to_bits(self, bit_width: u32) -> u32 {
        ((self.negative as u32) << (bit_width - 1)) | self.index as u32
    }

    /// Inverse of [`QuantCode::to_bits`]. Rejects the non-canonical negative zero.
    pub fn from_bits(bits: u32, bit_width: u32) -> Option<QuantCode> {
        let index_mask = (1u32 << (bit_width - 1)) - 1;
        if bits >> bit_width != 0 {
            return None;
        }
        let code = QuantCode {
            negative: (bits >> (bit_width - 1)) & 1 == 1,
            index: (bits & index_mask) as u16,
        };
        if code.negative && code.index == 0 {
            return None;
        }
        Some(code)
    }
}

/// Exact `2^p` as `f32`, or `None` when it is not representable.
pub fn pow2_f32(p: i32) -> Option<f32> {
    if !(F32_MIN_POW2..=F32_MAX_POW2).contains(&p) {
        return None;
    }
    // Every f32 power of two is a normal f64, and the narrowing is exact.
    Some(f64::from_bits(((p + 1023) as u64) << 52) as f32)
}

/// The exponent `p` such that `3·2^(p−2) ≤ |w| < 3·2^(p−1)`, for finite nonzero `w`.
///
/// With `|w| = m·2^e`, `1 ≤ m < 2`, this is `e` when `m < 1.5` and `e + 1`
/// otherwise. Read straight off the f64 bit pattern, so it is exact.
fn interval_exponent(w: f32) -> i32 {
    let bits = (w as f64).abs().to_bits();
    let e = ((bits >> 52) & 0x7ff) as i32 - 1023;
    let upper_half = (bits >> 51) & 1;
    e + upper_half as i32
}

fn check_bit_width(bit_width: u32) -> Result<()> {
    if !(MIN_BIT_WIDTH..=MAX_BIT_WIDTH).contains(&bit_width) {
        return Err(Error::InvalidBitWidth(bit_width));
    }
    Ok(())
}

impl LevelSet {
    /// Number of nonzero exponents a `bit_width`-bit code can address.
    pub fn exponent_count(bit_width: u32) -> i32 {
        (1i32 << (bit_width - 1)) - 1
    }

    /// Level set whose largest exponent is `n1`; `n2` follows from the code budget.
    pub fn new(bit_width: u32, n1: i32) -> Result<LevelSet> {
        check_bit_width(bit_width)?;
        if n1 > F32_MAX_POW2 {
            return Err(Error::InvalidLevelSet(format!(
                "largest level 2^{n1} overflows f32"
            )));
        }
        let n2 = n1 - Self::exponent_count(bit_width) + 1;
        Ok(LevelSet {
            bit_width: bit_width as u8,
            n1,
            n2,
        })
    }

    /// Rebuilds a level set from stored bounds, validating the code-budget rule.
    pub fn from_bounds(bit_width: u32, n1: i32, n2: i32) -> Result<LevelSet> {
        let ls = Self::new(bit_width, n1)?;
        if ls.n2 != n2 {
            return Err(Error::InvalidLevelSet(format!(
                "n2={n2} inconsistent with bit width {bit_width} and n1={n1} (expected {})",
                ls.n2
            )));
        }
        Ok(ls)
    }

    /// Derives the level set for a layer whose largest weight magnitude is `max_abs`.
    ///
    /// Without an override, `n1 = floor(log2(4·max_abs/3))`, which makes
    /// `max_abs` itself round to `2^n1`. An override fixes the largest level;
    /// values that are not a power of two are rounded down to one.
    pub fn derive(max_abs: f32, bit_width: u32, max_level_override: Option<f32>) -> Result<LevelSet> {
        check_bit_width(bit_width)?;
        let n1 = match max_level_override {
            Some(level) => {
                if !(level.is_finite() && level > 0.0) {
                    return Err(Error::InvalidLevelSet(format!(
                        "max level override must be positive and finite, got {level}"
                    )));
                }
                let bits = (level as f64).to_bits();
                let e = ((bits >> 52) & 0x7ff) as i32 - 1023;
                if bits & ((1u64 << 52) - 1) != 0 {
                    log::warn!(
                        "max level override {level} is not a power of two; using 2^{e}"
                    );
                }
                e
            }
            None => {
                if !max_abs.is_finite() {
                    return Err(Error::NonFinite(max_abs as f64));
                }
                if max_abs <= 0.0 {
                    return Err(Error::DegenerateLevelSet);
                }
                interval_exponent(max_abs)
            }
        };
        Self::new(bit_width, n1)
    }

    /// Convenience: derive from the weights of one tensor.
    pub fn for_weights(weights: &[f32], bit_width: u32, max_level_override: Option<f32>) -> Result<LevelSet> {
        let mut max_abs = 0.0f32;
        for &w in weights {
            if !w.is_finite() {
                return Err(Error::NonFinite(w as f64));
            }
            max_abs = max_abs.max(w.abs());
        }
        Self::derive(max_abs, bit_width, max_level_override)
    }

    pub fn bit_width(&self) -> u32 {
        self.bit_width as u32
    }

    pub fn n1(&self) -> i32 {
        self.n1
    }

    pub fn n2(&self) -> i32 {
        self.n2
    }

    /// `3·2^(n1−1)`: magnitudes at or above this clamp to `2^n1`.
    pub fn clamp_threshold(&self) -> f64 {
        3.0 * 2f64.powi(self.n1 - 1)
    }

    /// `3·2^(n2−2)`: magnitudes below this quantize to zero.
    pub fn zero_threshold(&self) -> f64 {
        3.0 * 2f64.powi(self.n2 - 2)
    }

    /// Quantizes one value into the set. Zero results are always `+0.0`.
    pub fn quantize(&self, w: f32) -> Result<f32> {
        if !w.is_finite() {
            return Err(Error::NonFinite(w as f64));
        }
        if w == 0.0 {
            return Ok(0.0);
        }
        let p = interval_exponent(w).min(self.n1);
        if p < self.n2 {
            return Ok(0.0);
        }
        // p ≥ exponent(w) ≥ -149 and p ≤ n1 ≤ 127, so 2^p is representable.
        let magnitude = pow2_f32(p).expect("level within f32 range");
        Ok(if w < 0.0 { -magnitude } else { magnitude })
    }

    pub fn encode(&self, wq: f32) -> Result<QuantCode> {
        if wq == 0.0 {
            return Ok(QuantCode::ZERO);
        }
        if !wq.is_finite() {
            return Err(Error::NotALevel(wq));
        }
        let bits = (wq as f64).abs().to_bits();
        if bits & ((1u64 << 52) - 1) != 0 {
            return Err(Error::NotALevel(wq));
        }
        let p = ((bits >> 52) & 0x7ff) as i32 - 1023;
        if p > self.n1 || p < self.n2 {
            return Err(Error::NotALevel(wq));
        }
        Ok(QuantCode {
            negative: wq < 0.0,
            index: (self.n1 - p + 1) as u16,
        })
    }

    /// Exponent addressed by a nonzero code.
    pub fn exponent_of(&self, code: QuantCode) -> Result<i32> {
        let max_index = Self::exponent_count(self.bit_width()) as u16;
        if code.index == 0 || code.index > max_index {
            return Err(Error::InvalidLevelSet(format!(
                "code index {} outside 1..={max_index}",
                code.index
            )));
        }
        Ok(self.n1 - code.index as i32 + 1)
    }

    pub fn decode(&self, code: QuantCode) -> Result<f32> {
        if code.index == 0 {
            if code.negative {
                return Err(Error::InvalidLevelSet("non-canonical negative zero code".into()));
            }
            return Ok(0.0);
        }
        let p = self.exponent_of(code)?;
        let magnitude = pow2_f32(p).ok_or_else(|| {
            Error::InvalidLevelSet(format!("level 2^{p} is not representable as f32"))
        })?;
        Ok(if code.negative { -magnitude } else { magnitude })
    }

    /// Every level representable in `f32`, ascending: negatives, zero, positives.
    pub fn levels(&self) -> Vec<f32> {
        let positives: Vec<f32> = (self.n2..=self.n1).filter_map(pow2_f32).collect();
        let mut out: Vec<f32> = positives.iter().rev().map(|v| -v).collect();
        out.push(0.0);
        out.extend(positives);
        out
    }
}
