//! Degradation model, image quality metrics and evaluation reports.

use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{invalid, Error, Result};
use crate::model::Model;
use crate::quant::{self, QModel};
use crate::real::Real;
use crate::tensor::{Shape, Tensor};

/// Keys cubic convolution kernel with `a = -0.5`.
pub fn keys_cubic(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        (A + 2.0) * x * x * x - (A + 3.0) * x * x + 1.0
    } else if x < 2.0 {
        A * x * x * x - 5.0 * A * x * x + 8.0 * A * x - 4.0 * A
    } else {
        0.0
    }
}

/// Per-output `(first source index, weights)` for resampling a line of `len`
/// samples by `factor` (downscale when `down`), with clamp-to-edge.
fn resample_taps(len: usize, factor: usize, down: bool) -> Vec<Vec<(usize, f64)>> {
    let f = factor as f64;
    let out_len = if down { len / factor } else { len * factor };
    // kernel stretched by the factor when shrinking (anti-aliasing)
    let stretch = if down { f } else { 1.0 };
    (0..out_len)
        .map(|i| {
            let centre = if down {
                (i as f64 + 0.5) * f - 0.5
            } else {
                (i as f64 + 0.5) / f - 0.5
            };
            let lo = Float::floor(centre - 2.0 * stretch) as isize;
            let hi = Float::ceil(centre + 2.0 * stretch) as isize;
            let mut taps: Vec<(usize, f64)> = Vec::new();
            for t in lo..=hi {
                let w = keys_cubic((t as f64 - centre) / stretch);
                if w == 0.0 {
                    continue;
                }
                let idx = t.clamp(0, len as isize - 1) as usize;
                taps.push((idx, w));
            }
            let sum: f64 = taps.iter().map(|(_, w)| w).sum();
            taps.iter_mut().for_each(|(_, w)| *w /= sum);
            taps
        })
        .collect()
}

fn resample<F: Real>(x: &Tensor<F>, factor: usize, down: bool) -> Result<Tensor<F>> {
    let s = x.shape();
    let rows = resample_taps(s.h, factor, down);
    let cols = resample_taps(s.w, factor, down);
    let mid = Shape::new(s.n, s.h, cols.len(), s.c);
    let mut tmp = Vec::with_capacity(mid.len());
    for n in 0..s.n {
        for y in 0..s.h {
            for taps in &cols {
                for c in 0..s.c {
                    tmp.push(
                        taps.iter()
                            .map(|&(t, w)| w * x.get(n, y, t, c).to_f64())
                            .sum::<f64>(),
                    );
                }
            }
        }
    }
    let out = Shape::new(s.n, rows.len(), cols.len(), s.c);
    let mut data = Vec::with_capacity(out.len());
    for n in 0..s.n {
        for taps in &rows {
            for xx in 0..out.w {
                for c in 0..s.c {
                    let v: f64 = taps
                        .iter()
                        .map(|&(t, w)| w * tmp[mid.index(n, t, xx, c)])
                        .sum();
                    data.push(F::from_f64(v.clamp(0.0, 1.0)));
                }
            }
        }
    }
    Tensor::from_vec(out, data)
}

/// Anti-aliased bicubic downscale: Keys kernel stretched by `factor`,
/// separable, clamp-to-edge, sampled every `factor` pixels, clipped to
/// `[0, 1]`.
pub fn bicubic_downsample<F: Real>(hr: &Tensor<F>, factor: usize) -> Result<Tensor<F>> {
    let s = hr.shape();
    if factor == 0 || !s.h.is_multiple_of(factor) || !s.w.is_multiple_of(factor) {
        return Err(invalid!(
            "{}x{} image is not divisible by factor {}",
            s.h,
            s.w,
            factor
        ));
    }
    resample(hr, factor, true)
}

/// Bicubic upscale by `factor` (Keys kernel, clamp-to-edge, clipped to
/// `[0, 1]`). Used as the classical baseline.
pub fn bicubic_upsample<F: Real>(lr: &Tensor<F>, factor: usize) -> Result<Tensor<F>> {
    if factor == 0 {
        return Err(invalid!("upsampling factor must be >= 1"));
    }
    resample(lr, factor, false)
}

/// Low/high resolution training or evaluation pair.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair {
    pub lr: Tensor<f32>,
    pub hr: Tensor<f32>,
    pub id: String,
}

impl ImagePair {
    pub fn new(
        lr: Tensor<f32>,
        hr: Tensor<f32>,
        id: impl Into<String>,
        scale: usize,
    ) -> Result<Self> {
        let (l, h) = (lr.shape(), hr.shape());
        if h.h != l.h * scale || h.w != l.w * scale || h.c != l.c || h.n != l.n {
            return Err(invalid!("hr {:?} is not {}x lr {:?}", h, scale, l));
        }
        Ok(Self {
            lr,
            hr,
            id: id.into(),
        })
    }

    /// Crops `hr` to a multiple of `scale` and derives the LR image by bicubic
    /// downsampling.
    pub fn from_hr(hr: &Tensor<f32>, scale: usize, id: impl Into<String>) -> Result<Self> {
        let s = hr.shape();
        let (h, w) = (s.h / scale * scale, s.w / scale * scale);
        if h == 0 || w == 0 {
            return Err(invalid!(
                "image {}x{} smaller than scale {}",
                s.h,
                s.w,
                scale
            ));
        }
        let hr = hr.crop(0, 0, h, w)?;
        let lr = bicubic_downsample(&hr, scale)?;
        Self::new(lr, hr, id, scale)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum PsnrMode {
    Rgb,
    /// Luma with BT.601 studio-swing weights.
    Y,
}

/// PSNR in dB, or the signal that the inputs were identical.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Psnr {
    Db(f64),
    Infinite,
}

impl Psnr {
    pub fn as_f64(self) -> f64 {
        match self {
            Psnr::Db(v) => v,
            Psnr::Infinite => f64::INFINITY,
        }
    }

    pub fn db(self) -> Option<f64> {
        match self {
            Psnr::Db(v) => Some(v),
            Psnr::Infinite => None,
        }
    }
}

fn luma(r: f64, g: f64, b: f64) -> f64 {
    (65.481 * r + 128.553 * g + 24.966 * b + 16.0) / 255.0
}

/// `10 log10(1 / MSE)` for images in `[0, 1]`.
pub fn psnr<F: Real>(a: &Tensor<F>, b: &Tensor<F>, mode: PsnrMode) -> Result<Psnr> {
    if a.shape() != b.shape() {
        return Err(invalid!(
            "psnr shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        ));
    }
    let mse = match mode {
        PsnrMode::Rgb => {
            let sum: f64 = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(&x, &y)| {
                    let d = x.to_f64() - y.to_f64();
                    d * d
                })
                .sum();
            sum / a.data().len() as f64
        }
        PsnrMode::Y => {
            let c = a.shape().c;
            if c != 3 {
                return Err(invalid!("luma PSNR needs 3 channels, got {}", c));
            }
            let sum: f64 = a
                .data()
                .chunks_exact(3)
                .zip(b.data().chunks_exact(3))
                .map(|(p, q)| {
                    let ya = luma(p[0].to_f64(), p[1].to_f64(), p[2].to_f64());
                    let yb = luma(q[0].to_f64(), q[1].to_f64(), q[2].to_f64());
                    (ya - yb) * (ya - yb)
                })
                .sum();
            sum / a.shape().pixels() as f64
        }
    };
    if mse == 0.0 {
        return Ok(Psnr::Infinite);
    }
    Ok(Psnr::Db(10.0 * Float::log10(1.0 / mse)))
}

/// `2^(2 (psnr - 30)) / (runtime_ms * 1e-5)`.
pub fn challenge_score(psnr_uint8: f64, runtime_ms: f64) -> Result<f64> {
    if runtime_ms.is_nan() || runtime_ms <= 0.0 {
        return Err(invalid!("runtime must be positive, got {} ms", runtime_ms));
    }
    Ok(Float::powf(2.0, 2.0 * (psnr_uint8 - 30.0)) / (runtime_ms * 1e-5))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub id: String,
    pub psnr_fp32: Option<Psnr>,
    pub psnr_uint8: Option<Psnr>,
}

impl EvalRow {
    /// `psnr_fp32 - psnr_uint8` when both are finite.
    pub fn delta(&self) -> Option<f64> {
        Some(self.psnr_fp32?.db()? - self.psnr_uint8?.db()?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    /// `(id, reason)` of pairs that could not be evaluated.
    pub skipped: Vec<(String, String)>,
}

/// Arithmetic mean; infinite if any value is.
pub fn mean_psnr(values: impl IntoIterator<Item = Psnr>) -> Option<Psnr> {
    let mut n = 0usize;
    let mut sum = 0.0;
    for v in values {
        match v {
            Psnr::Infinite => return Some(Psnr::Infinite),
            Psnr::Db(d) => sum += d,
        }
        n += 1;
    }
    (n > 0).then(|| Psnr::Db(sum / n as f64))
}

impl EvalReport {
    pub fn mean_fp32(&self) -> Option<Psnr> {
        mean_psnr(self.rows.iter().filter_map(|r| r.psnr_fp32))
    }

    pub fn mean_uint8(&self) -> Option<Psnr> {
        mean_psnr(self.rows.iter().filter_map(|r| r.psnr_uint8))
    }

    pub fn mean_delta(&self) -> Option<f64> {
        Some(self.mean_fp32()?.db()? - self.mean_uint8()?.db()?)
    }
}

/// Super-resolves `lr` with the integer model and returns the result in
/// `[0, 1]` float.
pub fn quantized_super_resolve(qm: &QModel, lr: &Tensor<f32>) -> Result<Tensor<f32>> {
    let q = quant::quantize_image(lr);
    let out = quant::qforward(qm, &q)?;
    Ok(quant::dequantize_image(&out))
}

/// Runs the float and/or quantized model over every pair. Pairs whose shapes
/// do not line up are reported in `skipped` rather than failing the run.
pub fn evaluate(
    model: Option<&Model<f32>>,
    qmodel: Option<&QModel>,
    pairs: &[ImagePair],
    mode: PsnrMode,
) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(invalid!("evaluation needs at least one image pair"));
    }
    if model.is_none() && qmodel.is_none() {
        return Err(invalid!("evaluation needs a float or quantized model"));
    }
    let mut rows = Vec::with_capacity(pairs.len());
    let mut skipped = Vec::new();
    for p in pairs {
        let run = || -> Result<EvalRow> {
            let psnr_fp32 = match model {
                Some(m) => Some(psnr(&m.forward(&p.lr)?, &p.hr, mode)?),
                None => None,
            };
            let psnr_uint8 = match qmodel {
                Some(q) => Some(psnr(&quantized_super_resolve(q, &p.lr)?, &p.hr, mode)?),
                None => None,
            };
            Ok(EvalRow {
                id: p.id.clone(),
                psnr_fp32,
                psnr_uint8,
            })
        };
        match run() {
            Ok(row) => rows.push(row),
            Err(Error::InvalidArgument(reason)) => skipped.push((p.id.clone(), reason)),
            Err(e) => return Err(e),
        }
    }
    Ok(EvalReport { rows, skipped })
}
