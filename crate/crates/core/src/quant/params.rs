use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_BITS: u32 = 2;
pub const MAX_BITS: u32 = 32;

/// Uniform affine quantizer for one tensor.
///
/// `q = clip(round_half_even(r/S − Z), qmin, qmax)` and `r̃ = S·(q + Z)`,
/// with `S = (β − α)/(2^b − 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub scale: f64,
    pub zero_point: i64,
    pub bits: u32,
    pub signed: bool,
    pub symmetric: bool,
    pub alpha: f64,
    pub beta: f64,
}

/// Representable integer range for `bits` (two's complement when signed).
pub fn qrange(bits: u32, signed: bool) -> (i64, i64) {
    if signed {
        (-(1i64 << (bits - 1)), (1i64 << (bits - 1)) - 1)
    } else {
        (0, (1i64 << bits) - 1)
    }
}

pub(crate) fn check_bits(bits: u32) -> Result<()> {
    if !(MIN_BITS..=MAX_BITS).contains(&bits) {
        return Err(Error::domain(format!(
            "bit width {bits} outside {MIN_BITS}..={MAX_BITS}"
        )));
    }
    Ok(())
}

impl QuantParams {
    /// Symmetric signed quantizer over `[−β, β]`, `Z = 0`.
    pub fn symmetric(beta: f64, bits: u32) -> Result<Self> {
        check_bits(bits)?;
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::domain(format!(
                "symmetric range bound {beta} must be finite and > 0"
            )));
        }
        Ok(Self {
            scale: 2.0 * beta / levels(bits),
            zero_point: 0,
            bits,
            signed: true,
            symmetric: true,
            alpha: -beta,
            beta,
        })
    }

    /// Asymmetric quantizer over `[α, β]`; the zero point maps `α` onto the
    /// lowest code.
    pub fn asymmetric(alpha: f64, beta: f64, bits: u32, signed: bool) -> Result<Self> {
        check_bits(bits)?;
        if !(alpha.is_finite() && beta.is_finite() && beta > alpha) {
            return Err(Error::domain(format!("invalid clipping range [{alpha}, {beta}]")));
        }
        let scale = (beta - alpha) / levels(bits);
        let (qmin, _) = qrange(bits, signed);
        Ok(Self {
            scale,
            zero_point: (alpha / scale).round_ties_even() as i64 - qmin,
            bits,
            signed,
            symmetric: false,
            alpha,
            beta,
        })
    }

    /// Unsigned `[0, β]` quantizer with `Z = 0`, used for post-ReLU activations.
    pub fn unsigned(beta: f64, bits: u32) -> Result<Self> {
        let p = Self::asymmetric(0.0, beta, bits, false)?;
        debug_assert_eq!(p.zero_point, 0);
        Ok(p)
    }

    pub fn qmin(&self) -> i64 {
        qrange(self.bits, self.signed).0
    }

    pub fn qmax(&self) -> i64 {
        qrange(self.bits, self.signed).1
    }

    #[inline]
    pub fn quantize(&self, r: f64) -> i64 {
        let (lo, hi) = qrange(self.bits, self.signed);
        let q = (r / self.scale - self.zero_point as f64).round_ties_even();
        q.clamp(lo as f64, hi as f64) as i64
    }

    #[inline]
    pub fn dequantize(&self, q: i64) -> f64 {
        self.scale * (q + self.zero_point) as f64
    }

    /// `dequantize(quantize(r))`.
    #[inline]
    pub fn fake(&self, r: f64) -> f64 {
        self.dequantize(self.quantize(r))
    }

    /// Checks the structural invariants of the parameter set.
    pub fn validate(&self) -> Result<()> {
        check_bits(self.bits)?;
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::domain("scale must be finite and > 0"));
        }
        if self.symmetric && (self.zero_point != 0 || self.alpha != -self.beta) {
            return Err(Error::domain("symmetric quantizer needs Z = 0 and α = −β"));
        }
        let expect = (self.beta - self.alpha) / levels(self.bits);
        if (expect - self.scale).abs() > 1e-12 * self.scale.max(1.0) {
            return Err(Error::domain(format!(
                "scale {} inconsistent with range (expected {expect})",
                self.scale
            )));
        }
        Ok(())
    }
}

#[inline]
fn levels(bits: u32) -> f64 {
    2f64.powi(bits as i32) - 1.0
}

/// Chooses the clipping range from data.
///
/// Asymmetric: `[min(v_min, 0), max(v_max, 0)]`, unsigned codes. Symmetric:
/// `β = max(|v_min|, |v_max|) = −α`, signed codes, `Z = 0`. A zero-width
/// range falls back to `[0, 1]` (asymmetric) or `[−1, 1]` (symmetric).
pub fn calibrate(values: &[f64], bits: u32, symmetric: bool) -> Result<QuantParams> {
    if values.is_empty() {
        return Err(Error::domain("calibration needs at least one value"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("calibration values must be finite"));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if symmetric {
        let b = lo.abs().max(hi.abs());
        QuantParams::symmetric(if b > 0.0 { b } else { 1.0 }, bits)
    } else {
        let (a, b) = (lo.min(0.0), hi.max(0.0));
        if b > a {
            QuantParams::asymmetric(a, b, bits, false)
        } else {
            QuantParams::asymmetric(0.0, 1.0, bits, false)
        }
    }
}
