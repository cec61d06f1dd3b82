//! Linear integer quantization for weights, activations and hash-table features.
//!
//! Weights and hash features use a symmetric code range centered at zero,
//! activations use an asymmetric range with an integer zero point. Both share
//! the scale `s = (v_max - v_min) / (2^b - 1)`.
//!
//! Rounding is half away from zero everywhere (`f64::round`).

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MIN_BITS: u8 = 1;
pub const MAX_BITS: u8 = 8;

/// Half-width used to widen a calibration range that collapsed to a point.
pub const DEGENERATE_EPSILON: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantError {
    #[error("calibration needs at least one sample")]
    EmptyCalibration,
    #[error("calibration sample {index} is not finite ({value})")]
    NonFiniteSample { index: usize, value: f64 },
    #[error("percentile {0} is outside (0, 1]")]
    BadPercentile(f64),
    #[error("bit width {0} is outside [1, 8]")]
    BitsOutOfRange(u32),
    #[error("invalid value range [{0}, {1}]")]
    InvalidRange(f64, f64),
    #[error("cannot quantize non-finite value {0}")]
    NonFiniteInput(f64),
    #[error("code {code} is outside [{q_min}, {q_max}]")]
    CodeOutOfRange { code: i32, q_min: i32, q_max: i32 },
}

/// Calibrated `[v_min, v_max]` interval of a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueRange {
    pub v_min: f64,
    pub v_max: f64,
}

impl ValueRange {
    pub fn new(v_min: f64, v_max: f64) -> Result<Self, QuantError> {
        if !v_min.is_finite() || !v_max.is_finite() || v_min > v_max {
            return Err(QuantError::InvalidRange(v_min, v_max));
        }
        Ok(Self { v_min, v_max })
    }

    /// `r_v`, the width of the range.
    pub fn width(&self) -> f64 {
        self.v_max - self.v_min
    }

    fn widen_if_degenerate(self) -> Self {
        if self.v_min == self.v_max {
            log::debug!("degenerate calibration range at {}, widening", self.v_min);
            Self {
                v_min: self.v_min - DEGENERATE_EPSILON,
                v_max: self.v_max + DEGENERATE_EPSILON,
            }
        } else {
            self
        }
    }

    /// Smallest range containing both `self` and zero.
    pub fn including_zero(self) -> Self {
        Self {
            v_min: self.v_min.min(0.0),
            v_max: self.v_max.max(0.0),
        }
    }
}

/// Calibrates a value range from samples.
///
/// `percentile = 1.0` yields the exact extrema; smaller values clip both tails
/// symmetrically, keeping the central `percentile` mass. Quantiles interpolate
/// linearly between order statistics.
pub fn calibrate_range(samples: &[f64], percentile: f64) -> Result<ValueRange, QuantError> {
    if samples.is_empty() {
        return Err(QuantError::EmptyCalibration);
    }
    if !(percentile > 0.0 && percentile <= 1.0) {
        return Err(QuantError::BadPercentile(percentile));
    }
    if let Some((index, &value)) = samples.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(QuantError::NonFiniteSample { index, value });
    }

    let range = if percentile == 1.0 {
        let (lo, hi) = samples
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        ValueRange {
            v_min: lo,
            v_max: hi,
        }
    } else {
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let tail = (1.0 - percentile) / 2.0;
        ValueRange {
            v_min: sorted_quantile(&sorted, tail),
            v_max: sorted_quantile(&sorted, 1.0 - tail),
        }
    };
    Ok(range.widen_if_degenerate())
}

fn sorted_quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantMode {
    SymmetricWeight,
    AsymmetricActivation,
}

/// Clip bounds used by symmetric quantization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SymmetricBounds {
    /// `[-(2^(b-1) - 1), 2^(b-1) - 1]`, zero-centered.
    #[default]
    Balanced,
    /// `[-2^(b-1) - 1, 2^(b-1) - 1]`, one code wider than `b` bits can hold on
    /// the negative side. Only useful for fidelity experiments.
    ExtendedNegative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub bits: u8,
    pub scale: f64,
    pub zero_point: i32,
    pub q_min: i32,
    pub q_max: i32,
    pub mode: QuantMode,
}

fn check_bits(bits: u32) -> Result<u8, QuantError> {
    if (MIN_BITS as u32..=MAX_BITS as u32).contains(&bits) {
        Ok(bits as u8)
    } else {
        Err(QuantError::BitsOutOfRange(bits))
    }
}

fn levels(bits: u8) -> f64 {
    ((1u32 << bits) - 1) as f64
}

fn scale_for(range: ValueRange, bits: u8) -> f64 {
    let width = range.widen_if_degenerate().width();
    width / levels(bits)
}

pub fn make_weight_params(range: ValueRange, bits: u32) -> Result<QuantParams, QuantError> {
    make_weight_params_with(range, bits, SymmetricBounds::Balanced)
}

pub fn make_weight_params_with(
    range: ValueRange,
    bits: u32,
    bounds: SymmetricBounds,
) -> Result<QuantParams, QuantError> {
    let bits = check_bits(bits)?;
    // 2^(b-1) - 1 is zero at one bit, which would leave a single code.
    let half = ((1i32 << (bits - 1)) - 1).max(1);
    let q_min = match bounds {
        SymmetricBounds::Balanced => -half,
        SymmetricBounds::ExtendedNegative => -(1i32 << (bits - 1)) - 1,
    };
    Ok(QuantParams {
        bits,
        scale: scale_for(range, bits),
        zero_point: 0,
        q_min,
        q_max: half,
        mode: QuantMode::SymmetricWeight,
    })
}

/// Asymmetric parameters. Ranges that exclude zero are first extended to
/// contain it so that the zero point stays a valid code.
pub fn make_activation_params(range: ValueRange, bits: u32) -> Result<QuantParams, QuantError> {
    let bits = check_bits(bits)?;
    let range = range.including_zero().widen_if_degenerate();
    let q_max = (1i32 << bits) - 1;
    let zero_point = ((1.0 - range.v_max / range.width()) * levels(bits)).round() as i32;
    Ok(QuantParams {
        bits,
        scale: scale_for(range, bits),
        zero_point: zero_point.clamp(0, q_max),
        q_min: 0,
        q_max,
        mode: QuantMode::AsymmetricActivation,
    })
}

impl QuantParams {
    #[inline]
    fn code_unchecked(&self, x: f64) -> i32 {
        let shifted = x / self.scale + self.zero_point as f64;
        // Clamp in floating point first so huge inputs cannot overflow the cast.
        shifted.round().clamp(self.q_min as f64, self.q_max as f64) as i32
    }

    #[inline]
    fn value_unchecked(&self, q: i32) -> f64 {
        (q - self.zero_point) as f64 * self.scale
    }

    pub fn quantize(&self, x: f64) -> Result<i32, QuantError> {
        if !x.is_finite() {
            return Err(QuantError::NonFiniteInput(x));
        }
        Ok(self.code_unchecked(x))
    }

    pub fn dequantize(&self, q: i32) -> Result<f64, QuantError> {
        if q < self.q_min || q > self.q_max {
            return Err(QuantError::CodeOutOfRange {
                code: q,
                q_min: self.q_min,
                q_max: self.q_max,
            });
        }
        Ok(self.value_unchecked(q))
    }

    /// Quantize-then-dequantize of one value. Non-finite inputs pass through
    /// unchanged; use [`QuantParams::quantize`] when they must be rejected.
    #[inline]
    pub fn fake(&self, x: f64) -> f64 {
        if !x.is_finite() {
            return x;
        }
        self.value_unchecked(self.code_unchecked(x))
    }

    /// Lowest and highest values the codes can represent.
    pub fn representable(&self) -> (f64, f64) {
        (
            self.value_unchecked(self.q_min),
            self.value_unchecked(self.q_max),
        )
    }

    /// Straight-through gradient of [`QuantParams::fake`]: one inside the
    /// representable interval, zero outside it.
    #[inline]
    pub fn ste_grad(&self, x: f64) -> f64 {
        let (lo, hi) = self.representable();
        if x >= lo && x <= hi {
            1.0
        } else {
            0.0
        }
    }

    pub fn fake_quantize(&self, xs: &[f64]) -> Result<Vec<f64>, QuantError> {
        xs.iter()
            .map(|&x| self.quantize(x).map(|q| self.value_unchecked(q)))
            .collect()
    }

    pub fn fake_quantize_in_place(&self, xs: &mut [f64]) {
        for x in xs {
            *x = self.fake(*x);
        }
    }
}
