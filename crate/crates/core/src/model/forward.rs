use alloc::vec::Vec;

use super::{BlockPlan, MergeMode, MixMode, Model};
use crate::error::{invalid, Result};
use crate::ops::{add, clipped_relu, conv2d, depth_to_space, relu};
use crate::real::Real;
use crate::tensor::Tensor;

/// Every intermediate tensor of one forward pass. Backpropagation and
/// calibration both read from it.
#[derive(Clone, Debug)]
pub struct Trace<F> {
    pub input: Tensor<F>,
    pub head_pre: Tensor<F>,
    /// Input convolution after the hidden activation.
    pub head: Tensor<F>,
    pub blocks: Vec<BlockTrace<F>>,
    pub post: Option<Tensor<F>>,
    /// Output convolution of the feature path.
    pub body: Tensor<F>,
    /// Fixed 1x1 convolution of the input.
    pub upsample: Tensor<F>,
    pub merge_concat: Option<Tensor<F>>,
    pub merged: Tensor<F>,
    /// After depth-to-space, before the final clip.
    pub shuffled: Tensor<F>,
    pub output: Tensor<F>,
}

#[allow(clippy::large_enum_variant)]
#[derive(Clone, Debug)]
pub enum BlockTrace<F> {
    Hetero {
        input: Tensor<F>,
        parts: [Tensor<F>; 2],
        pre: [Tensor<F>; 2],
        /// Concatenated branch outputs after activation, before any rotation.
        concat: Tensor<F>,
        out: Tensor<F>,
    },
    Plain {
        input: Tensor<F>,
        pre: Tensor<F>,
        out: Tensor<F>,
    },
}

impl<F> BlockTrace<F> {
    pub fn out(&self) -> &Tensor<F> {
        match self {
            BlockTrace::Hetero { out, .. } | BlockTrace::Plain { out, .. } => out,
        }
    }

    pub fn input(&self) -> &Tensor<F> {
        match self {
            BlockTrace::Hetero { input, .. } | BlockTrace::Plain { input, .. } => input,
        }
    }
}

impl<F: Real> Model<F> {
    fn hidden(&self, pre: &Tensor<F>) -> Tensor<F> {
        if self.config.hidden_activation {
            relu(pre)
        } else {
            pre.clone()
        }
    }

    /// Super-resolves `lr` (values in `[0, 1]`, `image_channels` channels).
    /// The output is `scale` times larger and clipped to `[0, 1]`.
    pub fn forward(&self, lr: &Tensor<F>) -> Result<Tensor<F>> {
        Ok(self.trace(lr)?.output)
    }

    pub fn trace(&self, lr: &Tensor<F>) -> Result<Trace<F>> {
        let cfg = &self.config;
        if lr.shape().c != cfg.image_channels {
            return Err(invalid!(
                "model expects {} input channels, got {}",
                cfg.image_channels,
                lr.shape().c
            ));
        }
        let plan = self.plan();
        let l = &self.layers;

        let head_pre = conv2d(lr, &l[plan.head])?;
        let head = self.hidden(&head_pre);

        let mut blocks = Vec::with_capacity(plan.blocks.len());
        let mut x = head.clone();
        for bp in &plan.blocks {
            let trace = match *bp {
                BlockPlan::Plain { conv } => {
                    let pre = conv2d(&x, &l[conv])?;
                    let out = self.hidden(&pre);
                    BlockTrace::Plain { input: x, pre, out }
                }
                BlockPlan::Hetero {
                    branch0,
                    branch1,
                    mix,
                } => {
                    let mut parts = x.channel_split(&[cfg.split.0, cfg.split.1])?;
                    let p1 = parts.pop().expect("two parts");
                    let p0 = parts.pop().expect("two parts");
                    let pre0 = conv2d(&p0, &l[branch0])?;
                    let pre1 = conv2d(&p1, &l[branch1])?;
                    let concat = Tensor::channel_concat(&[self.hidden(&pre0), self.hidden(&pre1)])?;
                    let out = match (cfg.mix_mode, mix) {
                        (MixMode::CrossConcat, _) => concat.channel_rotate(cfg.rotation_amount()),
                        (MixMode::StraightConcat, _) => concat.clone(),
                        (MixMode::Conv1x1, Some(m)) => conv2d(&concat, &l[m])?,
                        (MixMode::Conv1x1, None) => unreachable!("plan always has a mix conv"),
                    };
                    BlockTrace::Hetero {
                        input: x,
                        parts: [p0, p1],
                        pre: [pre0, pre1],
                        concat,
                        out,
                    }
                }
            };
            x = trace.out().clone();
            blocks.push(trace);
        }

        let post = match plan.post {
            Some(i) => Some(conv2d(&x, &l[i])?),
            None => None,
        };
        let body = conv2d(post.as_ref().unwrap_or(&x), &l[plan.body])?;
        let upsample = conv2d(lr, &l[plan.upsample])?;
        let (merge_concat, merged) = match (cfg.merge_mode, plan.merge) {
            (MergeMode::Add, _) => (None, add(&body, &upsample)?),
            (MergeMode::Concat, Some(m)) => {
                let cat = Tensor::channel_concat(&[body.clone(), upsample.clone()])?;
                let merged = conv2d(&cat, &l[m])?;
                (Some(cat), merged)
            }
            (MergeMode::Concat, None) => unreachable!("plan always has a merge conv"),
        };
        let shuffled = depth_to_space(&merged, cfg.scale)?;
        let output = clipped_relu(&shuffled, F::zero(), F::one());

        Ok(Trace {
            input: lr.clone(),
            head_pre,
            head,
            blocks,
            post,
            body,
            upsample,
            merge_concat,
            merged,
            shuffled,
            output,
        })
    }
}
