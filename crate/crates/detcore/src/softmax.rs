//! Portable exponential and softmax.
//!
//! `f32::exp` defers to the platform math library, whose last-bit behaviour
//! differs between libms. The engine uses its own range-reduced polynomial
//! built from IEEE add and multiply only (no FMA), so results are identical
//! wherever binary32 round-to-nearest-even arithmetic is available.

use crate::arith::tree_sum;
use crate::error::{DetError, Result};

const LOG2E: f32 = std::f32::consts::LOG2_E;
/// High part of ln 2 with trailing zero bits, so `k * LN2_HI` is exact.
const LN2_HI: f32 = 0.693_359_375;
const LN2_LO: f32 = -2.121_944_4e-4;
/// Minimax coefficients for `(exp(r) - 1 - r) / r^2` on `|r| <= ln2 / 2`.
const P: [f32; 6] = [
    1.987_569_1e-4,
    1.398_199_9e-3,
    8.333_452e-3,
    4.166_579_6e-2,
    1.666_666_5e-1,
    5.000_000_1e-1,
];
const EXP_OVERFLOW: f32 = 88.722_84;
const EXP_UNDERFLOW: f32 = -103.972_08;

/// `2^k` for `-126 <= k <= 127`.
#[inline]
fn pow2(k: i32) -> f32 {
    debug_assert!((-126..=127).contains(&k));
    f32::from_bits(((k + 127) as u32) << 23)
}

/// Deterministic `e^x` for finite `x`, accurate to about one ulp.
pub fn det_exp(x: f32) -> f32 {
    if x > EXP_OVERFLOW {
        return f32::INFINITY;
    }
    if x < EXP_UNDERFLOW {
        return 0.0;
    }
    let k = (x * LOG2E).round();
    let r = (x - k * LN2_HI) - k * LN2_LO;
    let poly = P.iter().fold(0.0f32, |acc, &c| acc * r + c);
    let y = poly * (r * r) + r + 1.0;
    let k = k as i32;
    if k >= -126 {
        if k == 128 {
            return y * 2.0 * pow2(127);
        }
        y * pow2(k)
    } else {
        // Two scalings keep the intermediate normal; only the last one rounds.
        y * pow2(k + 64) * pow2(-64)
    }
}

/// Softmax with max subtraction and a canonical-tree normaliser.
pub fn det_softmax(logits: &[f32]) -> Result<Vec<f32>> {
    if logits.is_empty() {
        return Err(DetError::EmptyInput);
    }
    if let Some(index) = logits.iter().position(|v| !v.is_finite()) {
        return Err(DetError::NonFinite { index, value: logits[index] });
    }
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f32> = logits.iter().map(|&l| det_exp(l - max)).collect();
    let total = tree_sum(&exps);
    Ok(exps.iter().map(|&e| e / total).collect())
}
