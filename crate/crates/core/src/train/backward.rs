use alloc::vec;
use alloc::vec::Vec;

use crate::error::{internal, Result};
use crate::model::{BlockPlan, BlockTrace, MergeMode, MixMode, Model, Trace};
use crate::ops::{
    add, clipped_relu_backward, conv2d_backward, relu_backward, space_to_depth, ConvGrads,
};
use crate::real::Real;
use crate::tensor::Tensor;

/// Parameter gradients in canonical layer order; `None` for fixed layers.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGrads<F> {
    pub layers: Vec<Option<ConvGrads<F>>>,
}

impl<F: Real> ModelGrads<F> {
    pub fn zeros_like(model: &Model<F>) -> Self {
        let layers = model
            .layers()
            .iter()
            .map(|l| l.trainable.then(|| ConvGrads::zeros_like(l)))
            .collect();
        Self { layers }
    }

    /// Sum of squared gradient entries.
    pub fn squared_norm(&self) -> f64 {
        self.layers
            .iter()
            .flatten()
            .flat_map(|g| g.kernel.iter().chain(&g.bias))
            .map(|&v| {
                let v = Real::to_f64(v);
                v * v
            })
            .sum()
    }
}

/// Backpropagates `grad_out` (gradient of the loss with respect to the clipped
/// output) through the pass recorded in `trace`.
///
/// Returns parameter gradients and, when `input_grad` is set, the gradient with
/// respect to the LR input.
pub fn backward<F: Real>(
    model: &Model<F>,
    trace: &Trace<F>,
    grad_out: &Tensor<F>,
    input_grad: bool,
) -> Result<(ModelGrads<F>, Option<Tensor<F>>)> {
    let cfg = model.config();
    let plan = model.plan();
    let l = model.layers();
    if grad_out.shape() != trace.output.shape() {
        return Err(internal!(
            "gradient shape {:?} does not match output {:?}",
            grad_out.shape(),
            trace.output.shape()
        ));
    }
    if trace.blocks.len() != plan.blocks.len() {
        return Err(internal!(
            "trace has {} blocks, model has {}",
            trace.blocks.len(),
            plan.blocks.len()
        ));
    }
    let mut grads: Vec<Option<ConvGrads<F>>> = vec![None; l.len()];
    let hidden = |pre: &Tensor<F>, g: Tensor<F>| -> Result<Tensor<F>> {
        if cfg.hidden_activation {
            relu_backward(pre, &g)
        } else {
            Ok(g)
        }
    };
    // conv layer backward storing weight gradients for trainable layers
    let mut conv =
        |i: usize, x: &Tensor<F>, g: &Tensor<F>, need_input: bool| -> Result<Option<Tensor<F>>> {
            let w = &l[i];
            let (gi, gw) = conv2d_backward(x, w, g, need_input, w.trainable)?;
            grads[i] = gw;
            Ok(gi)
        };
    let expect = |t: Option<Tensor<F>>| t.ok_or_else(|| internal!("missing input gradient"));

    let g = clipped_relu_backward(&trace.shuffled, grad_out, F::zero(), F::one())?;
    let g_merged = space_to_depth(&g, cfg.scale)?;

    let (g_body, g_up) = match (cfg.merge_mode, plan.merge, &trace.merge_concat) {
        (MergeMode::Add, _, _) => (g_merged.clone(), g_merged),
        (MergeMode::Concat, Some(m), Some(cat)) => {
            let g_cat = expect(conv(m, cat, &g_merged, true)?)?;
            let body_c = trace.body.shape().c;
            let mut parts = g_cat.channel_split(&[body_c, g_cat.shape().c - body_c])?;
            let up = parts.pop().ok_or_else(|| internal!("split"))?;
            let body = parts.pop().ok_or_else(|| internal!("split"))?;
            (body, up)
        }
        _ => return Err(internal!("trace does not match the merge mode")),
    };

    let g_in_up = conv(plan.upsample, &trace.input, &g_up, input_grad)?;

    let feat = trace.blocks.last().map_or(&trace.head, |b| b.out());
    let mut g = match (plan.post, &trace.post) {
        (Some(p), Some(post)) => {
            let g_post = expect(conv(plan.body, post, &g_body, true)?)?;
            expect(conv(p, feat, &g_post, true)?)?
        }
        (None, None) => expect(conv(plan.body, feat, &g_body, true)?)?,
        _ => return Err(internal!("trace does not match the post convolution")),
    };

    for (bp, bt) in plan.blocks.iter().zip(&trace.blocks).rev() {
        g = match (*bp, bt) {
            (BlockPlan::Plain { conv: c }, BlockTrace::Plain { input, pre, .. }) => {
                let g_pre = hidden(pre, g)?;
                expect(conv(c, input, &g_pre, true)?)?
            }
            (
                BlockPlan::Hetero {
                    branch0,
                    branch1,
                    mix,
                },
                BlockTrace::Hetero {
                    parts, pre, concat, ..
                },
            ) => {
                let g_cat = match (cfg.mix_mode, mix) {
                    (MixMode::CrossConcat, _) => g.channel_rotate(-cfg.rotation_amount()),
                    (MixMode::StraightConcat, _) => g,
                    (MixMode::Conv1x1, Some(m)) => expect(conv(m, concat, &g, true)?)?,
                    (MixMode::Conv1x1, None) => return Err(internal!("missing mix convolution")),
                };
                let mut split = g_cat.channel_split(&[cfg.split.0, cfg.split.1])?;
                let g1 = split.pop().ok_or_else(|| internal!("split"))?;
                let g0 = split.pop().ok_or_else(|| internal!("split"))?;
                let g0 = expect(conv(branch0, &parts[0], &hidden(&pre[0], g0)?, true)?)?;
                let g1 = expect(conv(branch1, &parts[1], &hidden(&pre[1], g1)?, true)?)?;
                Tensor::channel_concat(&[g0, g1])?
            }
            _ => return Err(internal!("trace block kind does not match the model")),
        };
    }

    let g_head = hidden(&trace.head_pre, g)?;
    let g_in_head = conv(plan.head, &trace.input, &g_head, input_grad)?;
    let g_in = match (g_in_head, g_in_up) {
        (Some(a), Some(b)) => Some(add(&a, &b)?),
        _ => None,
    };
    Ok((ModelGrads { layers: grads }, g_in))
}
