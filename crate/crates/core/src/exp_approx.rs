//! Low-cost exponential for non-positive score differences.
//!
//! A difference `x <= 0` is multiplied by `s * log2(e)` and rounded to a
//! fixed-point integer `x_f` with `W_M` fractional bits. Adding the
//! exponent bias shifted into the exponent field, `B << W_M`, turns `x_f`
//! into the bit pattern of `2^I * (1 + F)`, where `I` and `F` are the integer
//! and fractional fields of `x_f`. This is the chord approximation of
//! `2^(I + F)` and always lies on or above the true value.
//!
//! Inputs at or below the clip threshold are replaced by the binary32 value
//! nearest `e^threshold`.

use crate::engine::{ActiveLength, VReg, VectorEngine};
use crate::error::{Error, Result};

/// Fixed-point quantization parameters for the exponential.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantSpec {
    /// Total fixed-point width `b`.
    pub bits: u32,
    /// Largest representable magnitude `a`.
    pub clip_magnitude: f64,
    /// `(2^(b-1) - 1) / a`, rounded to binary32.
    pub scale: f32,
    /// IEEE-754 binary32 exponent bias.
    pub bias: i32,
    pub mantissa_width: u32,
    pub clip_threshold: f32,
    /// `scale * log2(e)`, the single multiplier applied to each difference.
    pub fused_scale: f32,
    /// Binary32 nearest `e^clip_threshold`; returned for clipped inputs.
    pub clip_value: f32,
}

impl QuantSpec {
    pub fn new(bits: u32, clip_magnitude: f64, clip_threshold: f32) -> Result<Self> {
        if !(2..=32).contains(&bits) {
            return Err(Error::Config(format!("fixed-point width must be in 2..=32, got {bits}")));
        }
        if !(clip_magnitude.is_finite() && clip_magnitude > 0.0) {
            return Err(Error::Config(format!("clip magnitude must be positive, got {clip_magnitude}")));
        }
        if !(clip_threshold.is_finite() && clip_threshold < 0.0) {
            return Err(Error::Config(format!("clip threshold must be negative, got {clip_threshold}")));
        }
        let scale_exact = ((1u64 << (bits - 1)) - 1) as f64 / clip_magnitude;
        let fused_scale = (scale_exact * std::f64::consts::LOG2_E) as f32;
        // The converted product must fit a signed 32-bit lane.
        let extreme = (fused_scale as f64) * (clip_threshold as f64);
        if extreme.abs() >= 2_147_483_648.0 {
            return Err(Error::Config(format!(
                "clip threshold {clip_threshold} with scale {scale_exact} overflows 32-bit fixed point"
            )));
        }
        Ok(Self {
            bits,
            clip_magnitude,
            scale: scale_exact as f32,
            bias: 127,
            mantissa_width: 23,
            clip_threshold,
            fused_scale,
            clip_value: (clip_threshold as f64).exp() as f32,
        })
    }

    /// `B << W_M`, the integer added to move the bias into the exponent field.
    pub fn bias_term(&self) -> i32 {
        self.bias << self.mantissa_width
    }
}

impl Default for QuantSpec {
    fn default() -> Self {
        Self::new(32, 256.0, -15.0).expect("default quantization is valid")
    }
}

fn check_domain(x: f32) -> Result<()> {
    if !x.is_finite() || x > 0.0 {
        return Err(Error::NumericDomain(format!("exponential input must be finite and <= 0, got {x}")));
    }
    Ok(())
}

/// Fixed-point value `x_f = round_ties_even(fused_scale * delta)`.
///
/// `delta` must lie in `[clip_threshold, 0]`.
pub fn quantize(delta: f32, spec: &QuantSpec) -> Result<i32> {
    check_domain(delta)?;
    if delta < spec.clip_threshold {
        return Err(Error::NumericDomain(format!(
            "quantize input {delta} below clip threshold {}",
            spec.clip_threshold
        )));
    }
    Ok((spec.fused_scale * delta).round_ties_even() as i32)
}

/// Scalar form of the bit-trick exponential.
pub fn exp_approx_scalar(x: f32, spec: &QuantSpec) -> Result<f32> {
    check_domain(x)?;
    if x <= spec.clip_threshold {
        return Ok(spec.clip_value);
    }
    let xf = quantize(x, spec)?;
    Ok(f32::from_bits((xf + spec.bias_term()) as u32))
}

/// Vectorized exponential, in place on the active lanes of `v`.
///
/// `zero` must hold 0.0 in every active lane. The sequence is: clip mask,
/// clamp to the threshold, scale, convert, add bias, reinterpret, and
/// overwrite the clipped lanes with the clip constant.
pub fn vexp(engine: &mut VectorEngine, v: VReg, zero: VReg, spec: &QuantSpec, avl: ActiveLength) -> Result<()> {
    let lanes = engine.read(v);
    for i in 0..avl.get().min(lanes.len()) {
        check_domain(lanes.f32(i))?;
    }
    let clipped = engine.vmfle(v, spec.clip_threshold, avl)?;
    engine.vfadd_masked(v, zero, spec.clip_threshold, &clipped, avl)?;
    engine.vfmul_vs(v, v, spec.fused_scale, avl)?;
    engine.vfcvt_f2i(v, v, avl)?;
    engine.vadd_int(v, v, spec.bias_term(), avl)?;
    engine.reinterpret_i2f(v);
    engine.vfadd_masked(v, zero, spec.clip_value, &clipped, avl)?;
    Ok(())
}
