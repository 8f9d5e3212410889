//! Network assembly, forward pass and accounting.
//!
//! Channel plan of the baseline (`F = split.0 + split.1 = 28`):
//!
//! ```text
//! LR(3) -> conv_in 3x3 -> F -> m x block -> post 3x3 F->F -> conv_out 3x3 F->27 --+
//! LR(3) -> fixed 1x1 3->27 (each input channel repeated 9 times) -----------------+-> add
//!       -> depth_to_space(3) -> clipped ReLU(0, 1) -> SR(3)
//! ```
//!
//! Layers are stored in one canonical order (see [`LayerTag`]); file formats,
//! gradients and quantized models all use the same order.

mod config;
mod forward;
pub mod presets;

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use config::{BlockKind, MergeMode, MixMode, PostBlockConv, RotateDirection, XcatConfig};
pub use forward::{BlockTrace, Trace};

use crate::error::{invalid, Result};
use crate::ops::ConvWeights;
use crate::real::Real;

/// Role of a convolution in the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum LayerTag {
    Head = 0,
    Branch0 = 1,
    Branch1 = 2,
    MixConv = 3,
    BlockConv = 4,
    Post = 5,
    Body = 6,
    Merge = 7,
    Upsample = 8,
}

impl LayerTag {
    pub fn from_u8(v: u8) -> Option<Self> {
        use LayerTag::*;
        Some(match v {
            0 => Head,
            1 => Branch0,
            2 => Branch1,
            3 => MixConv,
            4 => BlockConv,
            5 => Post,
            6 => Body,
            7 => Merge,
            8 => Upsample,
            _ => return None,
        })
    }
}

/// Shape of one convolution in the canonical layer order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub tag: LayerTag,
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel: usize,
    pub trainable: bool,
}

impl LayerSpec {
    pub fn params(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel + self.out_channels
    }

    pub fn macs_per_pixel(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel
    }
}

/// Layer shapes implied by a configuration, in canonical order.
pub fn layer_specs(cfg: &XcatConfig) -> Vec<LayerSpec> {
    let f = cfg.feature_channels();
    let out = cfg.out_channels_before_d2s();
    let spec = |tag, out_channels, in_channels, kernel| LayerSpec {
        tag,
        out_channels,
        in_channels,
        kernel,
        trainable: tag != LayerTag::Upsample,
    };
    let mut v = vec![spec(LayerTag::Head, f, cfg.image_channels, 3)];
    for _ in 0..cfg.blocks {
        v.extend(block_specs(cfg));
    }
    match cfg.post_block_conv {
        PostBlockConv::Conv3x3 => v.push(spec(LayerTag::Post, f, f, 3)),
        PostBlockConv::Conv1x1 => v.push(spec(LayerTag::Post, f, f, 1)),
        PostBlockConv::None => {}
    }
    v.push(spec(LayerTag::Body, out, f, 3));
    if cfg.merge_mode == MergeMode::Concat {
        v.push(spec(LayerTag::Merge, out, 2 * out, 1));
    }
    v.push(spec(LayerTag::Upsample, out, cfg.image_channels, 1));
    v
}

/// Layers of a single block.
pub fn block_specs(cfg: &XcatConfig) -> Vec<LayerSpec> {
    let f = cfg.feature_channels();
    let spec = |tag, c_out, c_in, kernel| LayerSpec {
        tag,
        out_channels: c_out,
        in_channels: c_in,
        kernel,
        trainable: true,
    };
    match cfg.block_kind {
        BlockKind::PlainConv3x3 => vec![spec(LayerTag::BlockConv, f, f, 3)],
        BlockKind::HxBlock => {
            let (x, y) = cfg.split;
            let mut v = vec![
                spec(LayerTag::Branch0, x, x, cfg.branch_kernels.0),
                spec(LayerTag::Branch1, y, y, cfg.branch_kernels.1),
            ];
            if cfg.mix_mode == MixMode::Conv1x1 {
                v.push(spec(LayerTag::MixConv, f, f, 1));
            }
            v
        }
    }
}

/// Indices into the canonical layer list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct Plan {
    pub head: usize,
    pub blocks: Vec<BlockPlan>,
    pub post: Option<usize>,
    pub body: usize,
    pub merge: Option<usize>,
    pub upsample: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum BlockPlan {
    Hetero {
        branch0: usize,
        branch1: usize,
        mix: Option<usize>,
    },
    Plain {
        conv: usize,
    },
}

impl Plan {
    pub fn new(cfg: &XcatConfig) -> Self {
        let specs = layer_specs(cfg);
        let find = |tag| specs.iter().position(|s| s.tag == tag);
        let per_block = block_specs(cfg).len();
        let blocks = (0..cfg.blocks)
            .map(|b| {
                let base = 1 + b * per_block;
                match cfg.block_kind {
                    BlockKind::PlainConv3x3 => BlockPlan::Plain { conv: base },
                    BlockKind::HxBlock => BlockPlan::Hetero {
                        branch0: base,
                        branch1: base + 1,
                        mix: (cfg.mix_mode == MixMode::Conv1x1).then_some(base + 2),
                    },
                }
            })
            .collect();
        Self {
            head: 0,
            blocks,
            post: find(LayerTag::Post),
            body: find(LayerTag::Body).expect("body layer always present"),
            merge: find(LayerTag::Merge),
            upsample: find(LayerTag::Upsample).expect("upsample layer always present"),
        }
    }
}

/// 1x1 kernel with `image_channels * scale^2` outputs where output `o` copies
/// input channel `o mod image_channels`. Followed by depth-to-space with the
/// same scale it is exactly nearest-neighbour upsampling.
pub fn make_fixed_upsample_kernel<F: Real>(image_channels: usize, scale: usize) -> ConvWeights<F> {
    let out = image_channels * scale * scale;
    let mut kernel = vec![F::zero(); out * image_channels];
    for o in 0..out {
        kernel[o * image_channels + o % image_channels] = F::one();
    }
    ConvWeights {
        out_channels: out,
        in_channels: image_channels,
        kh: 1,
        kw: 1,
        kernel,
        bias: vec![F::zero(); out],
        trainable: false,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamCount {
    pub trainable: usize,
    pub fixed: usize,
}

/// Counts parameters (weights and biases) by walking actual weight arrays.
pub fn count_params<'a, F: Real>(
    layers: impl IntoIterator<Item = &'a ConvWeights<F>>,
) -> ParamCount {
    let mut c = ParamCount {
        trainable: 0,
        fixed: 0,
    };
    for l in layers {
        // the fixed kernel has a structurally zero bias that is not a parameter
        if l.trainable {
            c.trainable += l.param_count();
        } else {
            c.fixed += l.kernel.len();
        }
    }
    c
}

/// Closed-form parameter count for a configuration.
pub fn param_count_for(cfg: &XcatConfig) -> ParamCount {
    let mut c = ParamCount {
        trainable: 0,
        fixed: 0,
    };
    for s in layer_specs(cfg) {
        if s.trainable {
            c.trainable += s.params();
        } else {
            c.fixed += s.macs_per_pixel();
        }
    }
    c
}

/// Multiply-accumulates of one block per pixel.
pub fn block_macs_per_pixel(cfg: &XcatConfig) -> usize {
    block_specs(cfg).iter().map(LayerSpec::macs_per_pixel).sum()
}

pub fn block_param_count(cfg: &XcatConfig) -> usize {
    block_specs(cfg).iter().map(LayerSpec::params).sum()
}

/// Multiply-accumulates of one forward pass at LR resolution `h x w`. Channel
/// permutations, depth-to-space and additions count as zero.
pub fn mac_count(cfg: &XcatConfig, h: usize, w: usize) -> u64 {
    let per_pixel: usize = layer_specs(cfg).iter().map(LayerSpec::macs_per_pixel).sum();
    per_pixel as u64 * h as u64 * w as u64
}

/// Float network: configuration plus convolution weights in canonical order.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<F = f32> {
    config: XcatConfig,
    layers: Vec<ConvWeights<F>>,
}

impl<F: Real> Model<F> {
    /// Builds a network with He-uniform kernels (`U(-b, b)`, `b = sqrt(6 /
    /// fan_in)`), zero biases and the fixed upsampling kernel.
    pub fn build(config: XcatConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = layer_specs(&config)
            .into_iter()
            .map(|s| {
                if !s.trainable {
                    return make_fixed_upsample_kernel(config.image_channels, config.scale);
                }
                let fan_in = (s.in_channels * s.kernel * s.kernel) as f64;
                let bound = libm_sqrt(6.0 / fan_in);
                let n = s.out_channels * s.in_channels * s.kernel * s.kernel;
                let kernel = (0..n)
                    .map(|_| F::from_f64(rng.random_range(-bound..bound)))
                    .collect();
                ConvWeights {
                    out_channels: s.out_channels,
                    in_channels: s.in_channels,
                    kh: s.kernel,
                    kw: s.kernel,
                    kernel,
                    bias: vec![F::zero(); s.out_channels],
                    trainable: true,
                }
            })
            .collect();
        Ok(Self { config, layers })
    }

    /// He-uniform like [`Model::build`] but with the output convolution of the
    /// feature path zeroed. With the additive merge the untrained network is
    /// exactly nearest-neighbour upsampling, which is the usual starting point
    /// for training from scratch.
    pub fn build_residual(config: XcatConfig, seed: u64) -> Result<Self> {
        let mut m = Self::build(config, seed)?;
        let body = m.plan().body;
        let l = &mut m.layers[body];
        l.kernel.iter_mut().for_each(|v| *v = F::zero());
        l.bias.iter_mut().for_each(|v| *v = F::zero());
        Ok(m)
    }

    /// All trainable weights zero; only the fixed upsampling path is active.
    pub fn zeroed(config: XcatConfig) -> Result<Self> {
        let mut m = Self::build(config, 0)?;
        m.zero_trainable();
        Ok(m)
    }

    /// Assembles a model from explicit layers, checking each against the
    /// shapes implied by `config`.
    pub fn from_layers(config: XcatConfig, layers: Vec<ConvWeights<F>>) -> Result<Self> {
        config.validate()?;
        let specs = layer_specs(&config);
        if specs.len() != layers.len() {
            return Err(invalid!(
                "configuration implies {} layers, got {}",
                specs.len(),
                layers.len()
            ));
        }
        for (i, (s, l)) in specs.iter().zip(&layers).enumerate() {
            let ok = l.out_channels == s.out_channels
                && l.in_channels == s.in_channels
                && l.kh == s.kernel
                && l.kw == s.kernel
                && l.trainable == s.trainable
                && l.kernel.len() == s.macs_per_pixel()
                && l.bias.len() == s.out_channels;
            if !ok {
                return Err(invalid!(
                    "layer {} ({:?}) has shape {}x{}x{}x{} (trainable {}), expected {}x{}x{}x{} (trainable {})",
                    i,
                    s.tag,
                    l.out_channels,
                    l.in_channels,
                    l.kh,
                    l.kw,
                    l.trainable,
                    s.out_channels,
                    s.in_channels,
                    s.kernel,
                    s.kernel,
                    s.trainable
                ));
            }
            if !l.trainable && *l != make_fixed_upsample_kernel(config.image_channels, config.scale)
            {
                return Err(invalid!("layer {} is not the fixed upsampling kernel", i));
            }
        }
        Ok(Self { config, layers })
    }

    pub fn config(&self) -> &XcatConfig {
        &self.config
    }

    pub fn layers(&self) -> &[ConvWeights<F>] {
        &self.layers
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        layer_specs(&self.config)
    }

    /// Mutable kernel and bias of layer `i`. Lengths are fixed; the fixed
    /// upsampling kernel is not exposed.
    pub fn params_mut(&mut self, i: usize) -> Option<(&mut [F], &mut [F])> {
        let l = self.layers.get_mut(i)?;
        l.trainable
            .then_some((l.kernel.as_mut_slice(), l.bias.as_mut_slice()))
    }

    pub fn zero_trainable(&mut self) {
        for l in self.layers.iter_mut().filter(|l| l.trainable) {
            l.kernel.iter_mut().for_each(|v| *v = F::zero());
            l.bias.iter_mut().for_each(|v| *v = F::zero());
        }
    }

    pub fn param_count(&self) -> ParamCount {
        count_params(&self.layers)
    }

    /// MACs per LR pixel obtained from the actual weight arrays.
    pub fn macs_per_pixel(&self) -> usize {
        self.layers.iter().map(ConvWeights::macs_per_pixel).sum()
    }

    pub fn cast<G: Real>(&self) -> Model<G> {
        Model {
            config: self.config,
            layers: self.layers.iter().map(ConvWeights::cast).collect(),
        }
    }

    pub(crate) fn plan(&self) -> Plan {
        Plan::new(&self.config)
    }
}

fn libm_sqrt(v: f64) -> f64 {
    num_traits::Float::sqrt(v)
}
