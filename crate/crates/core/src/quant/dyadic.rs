use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest mantissa accepted: the multiplier must fit a signed 32-bit word.
pub const MANTISSA_LIMIT: i64 = i32::MAX as i64;

/// Largest shift accepted. Shifts above 31 are only produced for multipliers
/// that would otherwise keep fewer than 20 significant bits.
pub const MAX_DYADIC_SHIFT: u32 = 62;

/// `mantissa / 2^shift`, kept canonical (odd mantissa, or zero with shift 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DyadicScale {
    pub mantissa: i64,
    pub shift: u32,
}

impl DyadicScale {
    pub fn value(&self) -> f64 {
        self.mantissa as f64 / 2f64.powi(self.shift as i32)
    }

    pub fn is_canonical(&self) -> bool {
        self.shift <= MAX_DYADIC_SHIFT
            && self.mantissa.abs() <= MANTISSA_LIMIT
            && if self.mantissa == 0 {
                self.shift == 0
            } else {
                self.mantissa % 2 != 0 || self.shift == 0
            }
    }

    fn canonical(mut mantissa: i64, mut shift: u32) -> Self {
        if mantissa == 0 {
            return Self { mantissa: 0, shift: 0 };
        }
        while shift > 0 && mantissa % 2 == 0 {
            mantissa /= 2;
            shift -= 1;
        }
        Self { mantissa, shift }
    }

    /// `(acc·mantissa + 2^(shift−1)) >> shift` with an arithmetic shift
    /// (no rounding term when `shift == 0`). `None` on i128 overflow.
    #[inline]
    pub fn requantize(&self, acc: i128) -> Option<i128> {
        let prod = acc.checked_mul(self.mantissa as i128)?;
        if self.shift == 0 {
            Some(prod)
        } else {
            Some(prod.checked_add(1i128 << (self.shift - 1))? >> self.shift)
        }
    }
}

/// Nearest dyadic approximation of `s` with mantissa ≤ 2³¹−1 and
/// shift ≤ `max_shift`.
pub fn to_dyadic(s: f64, max_shift: u32) -> Result<DyadicScale> {
    if !(s.is_finite() && s > 0.0) {
        return Err(Error::domain(format!("dyadic scale must be finite and > 0, got {s}")));
    }
    if max_shift > MAX_DYADIC_SHIFT {
        return Err(Error::domain(format!(
            "max shift {max_shift} exceeds {MAX_DYADIC_SHIFT}"
        )));
    }
    if s.round() > MANTISSA_LIMIT as f64 {
        return Err(Error::domain(format!("scale {s} does not fit a 32-bit mantissa")));
    }
    // Largest shift whose scaled value stays within the mantissa range; any
    // smaller shift is a coarser grid contained in this one.
    let mut c = max_shift;
    while c > 0 && s * pow2(c) > MANTISSA_LIMIT as f64 {
        c -= 1;
    }
    let best_m = (s * pow2(c)).round().min(MANTISSA_LIMIT as f64) as i64;
    let mut best = (best_m, c);
    // One shift further, the clamped top mantissa can still be closer.
    if c < max_shift {
        let alt = MANTISSA_LIMIT;
        let err_alt = (s - alt as f64 / pow2(c + 1)).abs();
        let err_best = (s - best_m as f64 / pow2(c)).abs();
        if err_alt < err_best {
            best = (alt, c + 1);
        }
    }
    Ok(DyadicScale::canonical(best.0, best.1))
}

#[inline]
fn pow2(c: u32) -> f64 {
    2f64.powi(c as i32)
}
