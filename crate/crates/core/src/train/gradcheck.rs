use alloc::vec::Vec;

use rand::Rng;

use super::backward;
use crate::error::{invalid, Result};
use crate::model::{BlockTrace, LayerTag, Model, Trace};
use crate::tensor::Tensor;

/// Finite-difference comparison for one layer tag.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckRow {
    pub tag: LayerTag,
    pub checked: usize,
    /// Samples dropped because the perturbation crossed an activation kink.
    pub skipped: usize,
    pub max_rel_err: f64,
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn activation_pattern(model: &Model<f64>, t: &Trace<f64>) -> Vec<bool> {
    let mut mask = Vec::new();
    let mut relu = |x: &Tensor<f64>| mask.extend(x.data().iter().map(|&v| v > 0.0));
    if model.config().hidden_activation {
        relu(&t.head_pre);
        for b in &t.blocks {
            match b {
                BlockTrace::Hetero { pre, .. } => pre.iter().for_each(&mut relu),
                BlockTrace::Plain { pre, .. } => relu(pre),
            }
        }
    }
    mask.extend(t.shuffled.data().iter().map(|&v| v > 0.0 && v < 1.0));
    mask
}

fn objective(model: &Model<f64>, input: &Tensor<f64>, w: &Tensor<f64>) -> Result<(f64, Vec<bool>)> {
    let t = model.trace(input)?;
    let l = t
        .output
        .data()
        .iter()
        .zip(w.data())
        .map(|(o, w)| o * w)
        .sum();
    Ok((l, activation_pattern(model, &t)))
}

/// Compares analytic parameter gradients of `L = sum(w * output)` with random
/// `w` against central differences with step `h`, sampling
/// `samples_per_tag` parameters of every trainable layer tag. Samples whose
/// perturbation changes any ReLU or clip mask are redrawn.
pub fn gradient_check<R: Rng>(
    model: &Model<f64>,
    input: &Tensor<f64>,
    samples_per_tag: usize,
    h: f64,
    floor: f64,
    rng: &mut R,
) -> Result<Vec<GradCheckRow>> {
    if h.is_nan() || h <= 0.0 {
        return Err(invalid!("finite difference step must be positive"));
    }
    let trace = model.trace(input)?;
    let w = trace.output.map(|_| rng.random_range(-1.0..1.0));
    let base_mask = activation_pattern(model, &trace);
    let (grads, _) = backward(model, &trace, &w, false)?;

    let specs = model.layer_specs();
    let mut tags: Vec<LayerTag> = specs
        .iter()
        .filter(|s| s.trainable)
        .map(|s| s.tag)
        .collect();
    tags.sort_by_key(|t| *t as u8);
    tags.dedup();

    let mut rows = Vec::with_capacity(tags.len());
    let mut probe = model.clone();
    for tag in tags {
        let layers: Vec<usize> = (0..specs.len())
            .filter(|&i| specs[i].tag == tag && specs[i].trainable)
            .collect();
        let sizes: Vec<usize> = layers
            .iter()
            .map(|&i| model.layers()[i].param_count())
            .collect();
        let total: usize = sizes.iter().sum();
        let mut row = GradCheckRow {
            tag,
            checked: 0,
            skipped: 0,
            max_rel_err: 0.0,
        };
        let mut attempts = 0;
        while row.checked < samples_per_tag && attempts < samples_per_tag * 4 {
            attempts += 1;
            let mut k = rng.random_range(0..total);
            let mut li = 0;
            while k >= sizes[li] {
                k -= sizes[li];
                li += 1;
            }
            let layer = layers[li];
            let g = grads.layers[layer]
                .as_ref()
                .ok_or_else(|| invalid!("no gradient for layer {}", layer))?;
            let klen = g.kernel.len();
            let analytic = if k < klen {
                g.kernel[k]
            } else {
                g.bias[k - klen]
            };

            let mut eval_at = |delta: f64| -> Result<(f64, Vec<bool>)> {
                {
                    let (kernel, bias) = probe
                        .params_mut(layer)
                        .ok_or_else(|| invalid!("fixed layer"))?;
                    let p = if k < klen {
                        &mut kernel[k]
                    } else {
                        &mut bias[k - klen]
                    };
                    *p += delta;
                }
                let r = objective(&probe, input, &w);
                let (kernel, bias) = probe
                    .params_mut(layer)
                    .ok_or_else(|| invalid!("fixed layer"))?;
                let orig = if k < klen {
                    model.layers()[layer].kernel[k]
                } else {
                    model.layers()[layer].bias[k - klen]
                };
                if k < klen {
                    kernel[k] = orig;
                } else {
                    bias[k - klen] = orig;
                }
                r
            };
            let (lp, mp) = eval_at(h)?;
            let (lm, mm) = eval_at(-h)?;
            if mp != base_mask || mm != base_mask {
                row.skipped += 1;
                continue;
            }
            let numeric = (lp - lm) / (2.0 * h);
            row.max_rel_err = row
                .max_rel_err
                .max(relative_error(analytic, numeric, floor));
            row.checked += 1;
        }
        rows.push(row);
    }
    Ok(rows)
}
