//! UINT8 post-training quantization.
//!
//! Real value `r` maps to `q = clamp(round(r / scale) + zero_point, 0, 255)`
//! with rounding half away from zero. Weights are quantized per tensor,
//! activations per edge from calibrated ranges, biases to `i32` with scale
//! `input_scale * weight_scale`. Inference is integer only: `u8 x u8 -> i32`
//! accumulation, then requantization by the real multiplier
//! `input_scale * weight_scale / output_scale` evaluated in double precision.

mod calibrate;
mod qmodel;
mod search;

use num_traits::Float;

pub use calibrate::{calibrate, edges, CalibrationRecord, Edge};
pub use qmodel::{qforward, quantize_model, QConv, QModel};
pub use search::{representative_search, score_candidate, select_best, SearchResult};

use crate::error::{invalid, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Affine map between real values and `u8` codes.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct QuantParams {
    pub scale: f64,
    pub zero_point: i32,
}

/// Parameters of images and of the network output: `[0, 1]` in 255 steps.
pub const IMAGE_PARAMS: QuantParams = QuantParams {
    scale: 1.0 / 255.0,
    zero_point: 0,
};

impl QuantParams {
    pub fn new(scale: f64, zero_point: i32) -> Result<Self> {
        if !scale.is_finite() || scale <= 0.0 {
            return Err(invalid!(
                "quantization scale must be positive and finite, got {}",
                scale
            ));
        }
        if !(0..=255).contains(&zero_point) {
            return Err(invalid!("zero point {} outside [0, 255]", zero_point));
        }
        Ok(Self { scale, zero_point })
    }

    /// Parameters covering `[min, max]` widened to include zero, so that real
    /// zero is exactly representable. A degenerate range gets scale `1/255`
    /// with the zero point placed so the constant is exact.
    pub fn from_range(min: f64, max: f64) -> Self {
        let lo = min.min(0.0);
        let hi = max.max(0.0);
        if hi <= lo {
            let scale = 1.0 / 255.0;
            let zp = round_half_away(-lo / scale).clamp(0.0, 255.0) as i32;
            return Self {
                scale,
                zero_point: zp,
            };
        }
        let scale = (hi - lo) / 255.0;
        let zp = round_half_away(-lo / scale).clamp(0.0, 255.0) as i32;
        Self {
            scale,
            zero_point: zp,
        }
    }

    /// Real interval covered by the 256 codes.
    pub fn representable_range(&self) -> (f64, f64) {
        (self.dequantize(0), self.dequantize(255))
    }

    #[inline]
    pub fn quantize(&self, r: f64) -> u8 {
        quantize_value(r, *self)
    }

    #[inline]
    pub fn dequantize(&self, q: u8) -> f64 {
        dequantize_value(q, *self)
    }
}

#[inline]
pub fn round_half_away(v: f64) -> f64 {
    Float::round(v)
}

#[inline]
pub fn quantize_value(r: f64, p: QuantParams) -> u8 {
    let q = round_half_away(r / p.scale) + p.zero_point as f64;
    q.clamp(0.0, 255.0) as u8
}

#[inline]
pub fn dequantize_value(q: u8, p: QuantParams) -> f64 {
    (q as i32 - p.zero_point) as f64 * p.scale
}

/// `clamp(round(acc * multiplier) + zero_point, 0, 255)`.
#[inline]
pub fn requantize(acc: i64, multiplier: f64, zero_point: i32) -> u8 {
    (round_half_away(acc as f64 * multiplier) + zero_point as f64).clamp(0.0, 255.0) as u8
}

/// Quantizes a `[0, 1]` float image with [`IMAGE_PARAMS`].
pub fn quantize_image<F: Real>(t: &Tensor<F>) -> Tensor<u8> {
    t.map(|v| IMAGE_PARAMS.quantize(v.to_f64()))
}

pub fn dequantize_image<F: Real>(t: &Tensor<u8>) -> Tensor<F> {
    t.map(|q| F::from_f64(IMAGE_PARAMS.dequantize(q)))
}
