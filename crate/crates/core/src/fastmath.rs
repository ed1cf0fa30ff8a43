//! Inlinable, branch-free `exp` and `log` for batch kernels.
//!
//! Both functions reduce the argument with integer bit manipulation and then evaluate a
//! short rational approximation on the reduced interval. Special inputs (NaN, infinities,
//! zero, overflow and underflow) are resolved with bit-mask blends so that a loop calling
//! these functions has no data-dependent control flow and can be auto-vectorized.
//!
//! Review checklist for batch kernels built on this module:
//! - read parameters into locals before the loop
//! - the loop body touches only `in[i]` and `out[i]`
//! - no `if`/`match` on element values; use [`select`] or [`blend`]
//! - no calls to non-inlined math except where the precise policy requires it

#![allow(clippy::excessive_precision)]

use thiserror::Error;

/// Which implementation of `exp`/`log` a kernel uses for one whole evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum MathPolicy {
    /// Platform `f64::exp` / `f64::ln`.
    #[default]
    Precise,
    /// [`fast_exp`] / [`fast_log`].
    Fast,
}

impl MathPolicy {
    #[inline(always)]
    pub fn exp(self, x: f64) -> f64 {
        match self {
            MathPolicy::Precise => x.exp(),
            MathPolicy::Fast => fast_exp(x),
        }
    }

    #[inline(always)]
    pub fn ln(self, x: f64) -> f64 {
        match self {
            MathPolicy::Precise => x.ln(),
            MathPolicy::Fast => fast_log(x),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("input has {input} values but output has {output}")]
pub struct LengthMismatch {
    pub input: usize,
    pub output: usize,
}

/// Arithmetic select: `mask * a + (1 - mask) * b` for `mask` in {0, 1}.
///
/// Both operands always contribute, so a NaN or infinite operand poisons the result even when
/// it is not selected. Use [`blend`] where the unselected side may be non-finite.
#[inline(always)]
pub fn select(mask: f64, a: f64, b: f64) -> f64 {
    mask * a + (1.0 - mask) * b
}

/// Bitwise select: returns `a` when `cond` holds, `b` otherwise, without a branch.
#[inline(always)]
pub fn blend(cond: bool, a: f64, b: f64) -> f64 {
    let m = (cond as u64).wrapping_neg();
    f64::from_bits((a.to_bits() & m) | (b.to_bits() & !m))
}

// 1.5 * 2^52: adding it rounds to an integer held in the low mantissa bits.
const ROUND_SHIFT: f64 = 6755399441055744.0;

const LN2_HI: f64 = 6.931_471_803_691_238_164_90e-01;
const LN2_LO: f64 = 1.908_214_929_270_587_700_02e-10;

const EXP_P1: f64 = 1.666_666_666_666_660_190_37e-01;
const EXP_P2: f64 = -2.777_777_777_701_559_338_42e-03;
const EXP_P3: f64 = 6.613_756_321_437_934_361_17e-05;
const EXP_P4: f64 = -1.653_390_220_546_525_153_90e-06;
const EXP_P5: f64 = 4.138_136_797_057_238_460_39e-08;

const EXP_OVERFLOW: f64 = 7.097_827_128_933_839_730_96e+02;
const EXP_UNDERFLOW: f64 = -7.451_332_191_019_411_486_8e+02;

/// `2^k` for integral `k` in [-1022, 1023], using only unsigned integer operations.
#[inline(always)]
fn pow2(k: f64) -> f64 {
    let biased = (k + ROUND_SHIFT)
        .to_bits()
        .wrapping_sub(ROUND_SHIFT.to_bits())
        .wrapping_add(1023);
    f64::from_bits(biased << 52)
}

/// Exponential with a rational kernel after reduction `x = k ln2 + r`, `|r| <= ln2/2`.
#[inline(always)]
pub fn fast_exp(x: f64) -> f64 {
    let xc = x.clamp(-746.0, 710.0);
    let kf = (xc * std::f64::consts::LOG2_E + ROUND_SHIFT) - ROUND_SHIFT;

    let hi = xc - kf * LN2_HI;
    let lo = kf * LN2_LO;
    let r = hi - lo;
    let rr = r * r;
    let c = r - rr * (EXP_P1 + rr * (EXP_P2 + rr * (EXP_P3 + rr * (EXP_P4 + rr * EXP_P5))));
    let y = 1.0 - ((lo - (r * c) / (2.0 - c)) - hi);

    // Two-step scaling keeps both factors normal down to the subnormal range.
    let k1 = (0.5 * kf + ROUND_SHIFT) - ROUND_SHIFT;
    let scaled = y * pow2(k1) * pow2(kf - k1);

    let v = blend(x > EXP_OVERFLOW, f64::INFINITY, scaled);
    let v = blend(x < EXP_UNDERFLOW, 0.0, v);
    blend(x.is_nan(), x, v)
}

const LG1: f64 = 6.666_666_666_666_735_130e-01;
const LG2: f64 = 3.999_999_999_940_941_908e-01;
const LG3: f64 = 2.857_142_874_366_239_149e-01;
const LG4: f64 = 2.222_219_843_214_978_396e-01;
const LG5: f64 = 1.818_357_216_161_805_012e-01;
const LG6: f64 = 1.531_383_769_920_937_332e-01;
const LG7: f64 = 1.479_819_860_511_658_591e-01;

const SQRT_HALF_BITS: u64 = 0x3fe6_a09e_667f_3bcd;
const ONE_BITS: u64 = 0x3ff0_0000_0000_0000;
const MANTISSA_MASK: u64 = 0x000f_ffff_ffff_ffff;
const TWO_POW_54: f64 = 18014398509481984.0;
// 2^52 + 2^51: adding a small integer to its bit pattern and subtracting it converts to f64.
const INT_TO_F64_BITS: u64 = 0x4338_0000_0000_0000;

/// Natural logarithm with the mantissa reduced to `[sqrt(1/2), sqrt(2))` and an odd
/// rational kernel in `s = f / (2 + f)`.
#[inline(always)]
pub fn fast_log(x: f64) -> f64 {
    let subnormal = x < f64::MIN_POSITIVE;
    let xs = x * blend(subnormal, TWO_POW_54, 1.0);
    let bias = blend(subnormal, 54.0, 0.0);

    let bits = xs.to_bits().wrapping_add(ONE_BITS - SQRT_HALF_BITS);
    let k = ((bits >> 52) as i64) - 0x3ff;
    let m = f64::from_bits((bits & MANTISSA_MASK) + SQRT_HALF_BITS);
    let dk = f64::from_bits(INT_TO_F64_BITS.wrapping_add(k as u64)) - f64::from_bits(INT_TO_F64_BITS) - bias;

    let f = m - 1.0;
    let hfsq = 0.5 * f * f;
    let s = f / (2.0 + f);
    let z = s * s;
    let w = z * z;
    let t1 = w * (LG2 + w * (LG4 + w * LG6));
    let t2 = z * (LG1 + w * (LG3 + w * (LG5 + w * LG7)));
    let r = t2 + t1;
    let v = s * (hfsq + r) + dk * LN2_LO - hfsq + f + dk * LN2_HI;

    let v = blend(x == f64::INFINITY, x, v);
    let v = blend(x == 0.0, f64::NEG_INFINITY, v);
    blend(x < 0.0 || x.is_nan(), f64::NAN, v)
}

pub fn fast_exp_batch(input: &[f64], out: &mut [f64]) -> Result<(), LengthMismatch> {
    check_len(input, out)?;
    for (o, &x) in out.iter_mut().zip(input) {
        *o = fast_exp(x);
    }
    Ok(())
}

pub fn fast_log_batch(input: &[f64], out: &mut [f64]) -> Result<(), LengthMismatch> {
    check_len(input, out)?;
    for (o, &x) in out.iter_mut().zip(input) {
        *o = fast_log(x);
    }
    Ok(())
}

fn check_len(input: &[f64], out: &[f64]) -> Result<(), LengthMismatch> {
    if input.len() == out.len() {
        Ok(())
    } else {
        Err(LengthMismatch {
            input: input.len(),
            output: out.len(),
        })
    }
}
