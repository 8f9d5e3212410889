use alloc::vec::Vec;

use super::calibrate::calibrate;
use super::qmodel::quantize_model;
use crate::error::{invalid, Result};
use crate::eval::{psnr, quantized_super_resolve, ImagePair, PsnrMode};
use crate::model::Model;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult {
    pub best_index: usize,
    /// Mean UINT8 PSNR on the validation pairs per candidate; `-inf` where
    /// calibration or quantization failed.
    pub scores: Vec<f64>,
}

/// Calibrates on the single `candidate`, quantizes and returns the mean UINT8
/// PSNR over `val_pairs`. Any failure scores `-inf`.
pub fn score_candidate(
    model: &Model<f32>,
    candidate: &Tensor<f32>,
    val_pairs: &[ImagePair],
    mode: PsnrMode,
) -> f64 {
    let run = || -> Result<f64> {
        let cal = calibrate(model, core::slice::from_ref(candidate))?;
        let qm = quantize_model(model, &cal)?;
        let mut sum = 0.0;
        for p in val_pairs {
            sum += psnr(&quantized_super_resolve(&qm, &p.lr)?, &p.hr, mode)?.as_f64();
        }
        Ok(sum / val_pairs.len() as f64)
    };
    match run() {
        Ok(v) if !v.is_nan() => v,
        _ => f64::NEG_INFINITY,
    }
}

/// Index of the highest score, lowest index on ties.
pub fn select_best(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        match best {
            Some(b) if scores[b] >= s => {}
            _ if s.is_nan() => {}
            _ => best = Some(i),
        }
    }
    best.or_else(|| (!scores.is_empty()).then_some(0))
}

/// Linear search over single-image representative sets.
pub fn representative_search(
    model: &Model<f32>,
    candidates: &[Tensor<f32>],
    val_pairs: &[ImagePair],
    mode: PsnrMode,
) -> Result<SearchResult> {
    if candidates.is_empty() {
        return Err(invalid!(
            "representative search needs at least one candidate"
        ));
    }
    if val_pairs.is_empty() {
        return Err(invalid!(
            "representative search needs at least one validation pair"
        ));
    }
    let scores: Vec<f64> = candidates
        .iter()
        .map(|c| score_candidate(model, c, val_pairs, mode))
        .collect();
    let best_index = select_best(&scores).expect("non-empty scores");
    Ok(SearchResult { best_index, scores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::XcatConfig;
    use crate::tensor::Shape;

    #[test]
    fn tie_break_and_nan() {
        assert_eq!(select_best(&[1.0, 3.0, 3.0]), Some(1));
        assert_eq!(
            select_best(&[f64::NEG_INFINITY, f64::NEG_INFINITY]),
            Some(0)
        );
        assert_eq!(select_best(&[f64::NAN, 2.0]), Some(1));
        assert_eq!(select_best(&[]), None);
    }

    #[test]
    fn single_and_duplicate_candidates() {
        let m = Model::<f32>::build(XcatConfig::default(), 2).unwrap();
        let img = Tensor::from_fn(Shape::new(1, 5, 5, 3), |_, y, x, c| {
            ((y * 5 + x + c) % 7) as f32 / 7.0
        })
        .unwrap();
        let pair =
            ImagePair::from_hr(&crate::eval::bicubic_upsample(&img, 3).unwrap(), 3, "v").unwrap();
        let r = representative_search(
            &m,
            std::slice::from_ref(&img),
            std::slice::from_ref(&pair),
            PsnrMode::Rgb,
        )
        .unwrap();
        assert_eq!(r.best_index, 0);
        let r = representative_search(
            &m,
            &[img.clone(), img.clone()],
            std::slice::from_ref(&pair),
            PsnrMode::Rgb,
        )
        .unwrap();
        assert_eq!(r.best_index, 0);
        assert_eq!(r.scores[0], r.scores[1]);
        assert!(representative_search(&m, &[], &[pair], PsnrMode::Rgb).is_err());
        assert!(representative_search(&m, &[img], &[], PsnrMode::Rgb).is_err());
    }
}
