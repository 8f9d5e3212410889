use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use super::calibrate::{edges, CalibrationRecord, Edge};
use super::{quantize_value, requantize, round_half_away, QuantParams, IMAGE_PARAMS};
use crate::error::{internal, invalid, Result};
use crate::model::{layer_specs, BlockPlan, LayerTag, MergeMode, MixMode, Model, Plan, XcatConfig};
use crate::ops::{depth_to_space, ConvWeights};
use crate::tensor::Tensor;

/// Quantized convolution: `u8` kernel with per-tensor parameters and `i32`
/// bias in units of `input_scale * weight_scale`.
#[derive(Clone, Debug, PartialEq)]
pub struct QConv {
    pub tag: LayerTag,
    pub out_channels: usize,
    pub in_channels: usize,
    pub kh: usize,
    pub kw: usize,
    pub weights: Vec<u8>,
    pub weight_params: QuantParams,
    pub bias: Vec<i32>,
    pub trainable: bool,
}

impl QConv {
    pub fn dequantized_kernel(&self) -> Vec<f32> {
        self.weights
            .iter()
            .map(|&q| self.weight_params.dequantize(q) as f32)
            .collect()
    }
}

/// Integer network with parameters for every activation edge.
#[derive(Clone, Debug, PartialEq)]
pub struct QModel {
    config: XcatConfig,
    layers: Vec<QConv>,
    edges: Vec<Edge>,
    edge_params: Vec<QuantParams>,
}

impl QModel {
    /// Assembles a quantized model, checking layer shapes against the
    /// configuration. The edge table must hold one entry per edge.
    pub fn from_parts(
        config: XcatConfig,
        layers: Vec<QConv>,
        edge_params: Vec<QuantParams>,
    ) -> Result<Self> {
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
            let ok = s.tag == l.tag
                && s.out_channels == l.out_channels
                && s.in_channels == l.in_channels
                && s.kernel == l.kh
                && s.kernel == l.kw
                && s.trainable == l.trainable
                && l.weights.len() == s.macs_per_pixel()
                && l.bias.len() == s.out_channels;
            if !ok {
                return Err(invalid!(
                    "quantized layer {} ({:?}) does not match the configuration",
                    i,
                    s.tag
                ));
            }
        }
        Ok(Self {
            config,
            layers,
            edges: edges(&config),
            edge_params,
        })
    }

    pub fn config(&self) -> &XcatConfig {
        &self.config
    }

    pub fn layers(&self) -> &[QConv] {
        &self.layers
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge_params(&self) -> &[QuantParams] {
        &self.edge_params
    }

    pub fn params(&self, edge: Edge) -> Result<QuantParams> {
        let i = self
            .edges
            .iter()
            .position(|&e| e == edge)
            .ok_or_else(|| internal!("edge {:?} does not exist in this model", edge))?;
        self.edge_params
            .get(i)
            .copied()
            .ok_or_else(|| internal!("missing quantization parameters for edge {:?}", edge))
    }
}

fn weight_params(w: &ConvWeights<f32>) -> QuantParams {
    // small non-negative integer kernels (the fixed upsampler) quantize exactly
    let integral = w
        .kernel
        .iter()
        .all(|&v| (0.0..=255.0).contains(&v) && v == Float::round(v));
    if !w.trainable && integral {
        return QuantParams {
            scale: 1.0,
            zero_point: 0,
        };
    }
    let lo = w.kernel.iter().copied().fold(f32::INFINITY, f32::min) as f64;
    let hi = w.kernel.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    QuantParams::from_range(lo, hi)
}

fn quantize_conv(tag: LayerTag, w: &ConvWeights<f32>, input: QuantParams) -> QConv {
    let wp = weight_params(w);
    let bias_scale = input.scale * wp.scale;
    QConv {
        tag,
        out_channels: w.out_channels,
        in_channels: w.in_channels,
        kh: w.kh,
        kw: w.kw,
        weights: w
            .kernel
            .iter()
            .map(|&v| quantize_value(v as f64, wp))
            .collect(),
        weight_params: wp,
        bias: w
            .bias
            .iter()
            .map(|&b| {
                round_half_away(b as f64 / bias_scale).clamp(i32::MIN as f64, i32::MAX as f64)
                    as i32
            })
            .collect(),
        trainable: w.trainable,
    }
}

/// Input edge of every layer in canonical order.
fn layer_inputs(cfg: &XcatConfig, plan: &Plan) -> Vec<Edge> {
    let mut v = vec![Edge::Input; layer_specs(cfg).len()];
    let mut cur = Edge::Head;
    for (b, bp) in plan.blocks.iter().enumerate() {
        match *bp {
            BlockPlan::Plain { conv } => v[conv] = cur,
            BlockPlan::Hetero {
                branch0,
                branch1,
                mix,
            } => {
                v[branch0] = cur;
                v[branch1] = cur;
                if let Some(m) = mix {
                    v[m] = Edge::BlockConcat(b);
                }
            }
        }
        cur = Edge::Block(b);
    }
    if let Some(p) = plan.post {
        v[p] = cur;
        cur = Edge::Post;
    }
    v[plan.body] = cur;
    if let Some(m) = plan.merge {
        v[m] = Edge::MergeConcat;
    }
    v[plan.upsample] = Edge::Input;
    v
}

/// Quantizes weights per tensor and derives activation parameters from the
/// calibration ranges. Input, output, the fixed upsampling edge and the merged
/// edge (which only feeds the `[0, 1]` output clip) are pinned to
/// `scale = 1/255, zero_point = 0`.
pub fn quantize_model(model: &Model<f32>, cal: &CalibrationRecord) -> Result<QModel> {
    let cfg = *model.config();
    let edges = edges(&cfg);
    if cal.edges != edges {
        return Err(invalid!(
            "calibration record does not cover this model's edges"
        ));
    }
    let edge_params: Vec<QuantParams> = edges
        .iter()
        .zip(&cal.ranges)
        .map(|(&e, &(lo, hi))| match e {
            Edge::Input | Edge::Output | Edge::Upsample | Edge::Merged => IMAGE_PARAMS,
            _ => QuantParams::from_range(lo as f64, hi as f64),
        })
        .collect();
    let param_of = |e: Edge| edge_params[edges.iter().position(|&x| x == e).expect("edge listed")];
    let plan = model.plan();
    let inputs = layer_inputs(&cfg, &plan);
    let layers = model
        .layers()
        .iter()
        .zip(layer_specs(&cfg))
        .zip(inputs)
        .map(|((w, s), input)| quantize_conv(s.tag, w, param_of(input)))
        .collect();
    QModel::from_parts(cfg, layers, edge_params)
}

/// Integer convolution with zero-point correction, bias add, requantization
/// into `out` and, if `relu`, a floor at the output zero point.
fn qconv(
    x: &Tensor<u8>,
    xp: QuantParams,
    l: &QConv,
    out: QuantParams,
    relu: bool,
) -> Result<Tensor<u8>> {
    let s = x.shape();
    if s.c != l.in_channels {
        return Err(internal!(
            "quantized conv expects {} channels, got {}",
            l.in_channels,
            s.c
        ));
    }
    let (ph, pw) = (l.kh / 2, l.kw / 2);
    let k_len = l.in_channels * l.kh * l.kw;
    let w: Vec<i32> = l
        .weights
        .iter()
        .map(|&q| q as i32 - l.weight_params.zero_point)
        .collect();
    let xd: Vec<i32> = x.data().iter().map(|&q| q as i32 - xp.zero_point).collect();
    let multiplier = xp.scale * l.weight_params.scale / out.scale;
    let floor = if relu { out.zero_point as u8 } else { 0 };
    let mut patch = vec![0i32; k_len];
    let mut data = Vec::with_capacity(s.pixels() * l.out_channels);
    for n in 0..s.n {
        for y in 0..s.h {
            for xx in 0..s.w {
                // padding holds real zero, i.e. 0 after zero-point removal
                patch.iter_mut().for_each(|v| *v = 0);
                for i in 0..l.kh {
                    let sy = y as isize + i as isize - ph as isize;
                    if sy < 0 || sy >= s.h as isize {
                        continue;
                    }
                    for j in 0..l.kw {
                        let sx = xx as isize + j as isize - pw as isize;
                        if sx < 0 || sx >= s.w as isize {
                            continue;
                        }
                        let base = s.index(n, sy as usize, sx as usize, 0);
                        for c in 0..s.c {
                            patch[(c * l.kh + i) * l.kw + j] = xd[base + c];
                        }
                    }
                }
                for o in 0..l.out_channels {
                    let row = &w[o * k_len..(o + 1) * k_len];
                    let acc: i64 = row
                        .iter()
                        .zip(&patch)
                        .map(|(&a, &b)| (a * b) as i64)
                        .sum::<i64>()
                        + l.bias[o] as i64;
                    data.push(requantize(acc, multiplier, out.zero_point).max(floor));
                }
            }
        }
    }
    Tensor::from_vec(s.with_c(l.out_channels), data)
}

fn qadd(
    a: &Tensor<u8>,
    ap: QuantParams,
    b: &Tensor<u8>,
    bp: QuantParams,
    out: QuantParams,
) -> Result<Tensor<u8>> {
    let (ma, mb) = (ap.scale / out.scale, bp.scale / out.scale);
    a.zip_map(b, |x, y| {
        let v = ma * (x as i32 - ap.zero_point) as f64 + mb * (y as i32 - bp.zero_point) as f64;
        (round_half_away(v) + out.zero_point as f64).clamp(0.0, 255.0) as u8
    })
}

fn requantize_tensor(t: &Tensor<u8>, from: QuantParams, to: QuantParams) -> Tensor<u8> {
    let m = from.scale / to.scale;
    t.map(|q| requantize((q as i32 - from.zero_point) as i64, m, to.zero_point))
}

/// Integer-only inference. `lr` is a `u8` image with `scale = 1/255`,
/// `zero_point = 0`; the output uses the same parameters.
pub fn qforward(qm: &QModel, lr: &Tensor<u8>) -> Result<Tensor<u8>> {
    let cfg = &qm.config;
    if lr.shape().c != cfg.image_channels {
        return Err(invalid!(
            "model expects {} input channels, got {}",
            cfg.image_channels,
            lr.shape().c
        ));
    }
    if qm.edge_params.len() != qm.edges.len() {
        return Err(internal!(
            "model has {} edges but {} quantization parameter sets",
            qm.edges.len(),
            qm.edge_params.len()
        ));
    }
    let plan = Plan::new(cfg);
    let l = &qm.layers;
    let p = |e| qm.params(e);
    let relu = cfg.hidden_activation;

    let input_p = p(Edge::Input)?;
    let mut x = qconv(lr, input_p, &l[plan.head], p(Edge::Head)?, relu)?;
    let mut xp = p(Edge::Head)?;
    for (b, bp) in plan.blocks.iter().enumerate() {
        let out_p = p(Edge::Block(b))?;
        x = match *bp {
            BlockPlan::Plain { conv } => qconv(&x, xp, &l[conv], out_p, relu)?,
            BlockPlan::Hetero {
                branch0,
                branch1,
                mix,
            } => {
                let cat_p = if mix.is_some() {
                    p(Edge::BlockConcat(b))?
                } else {
                    out_p
                };
                let parts = x.channel_split(&[cfg.split.0, cfg.split.1])?;
                let o0 = qconv(&parts[0], xp, &l[branch0], cat_p, relu)?;
                let o1 = qconv(&parts[1], xp, &l[branch1], cat_p, relu)?;
                let cat = Tensor::channel_concat(&[o0, o1])?;
                match (cfg.mix_mode, mix) {
                    (MixMode::CrossConcat, _) => cat.channel_rotate(cfg.rotation_amount()),
                    (MixMode::StraightConcat, _) => cat,
                    (MixMode::Conv1x1, Some(m)) => qconv(&cat, cat_p, &l[m], out_p, false)?,
                    (MixMode::Conv1x1, None) => return Err(internal!("missing mix convolution")),
                }
            }
        };
        xp = out_p;
    }
    if let Some(i) = plan.post {
        x = qconv(&x, xp, &l[i], p(Edge::Post)?, false)?;
        xp = p(Edge::Post)?;
    }
    let merged_p = p(Edge::Merged)?;
    let merged = match (cfg.merge_mode, plan.merge) {
        (MergeMode::Add, _) => {
            let (body_p, up_p) = (p(Edge::Body)?, p(Edge::Upsample)?);
            let body = qconv(&x, xp, &l[plan.body], body_p, false)?;
            let up = qconv(lr, input_p, &l[plan.upsample], up_p, false)?;
            qadd(&body, body_p, &up, up_p, merged_p)?
        }
        (MergeMode::Concat, Some(m)) => {
            let cat_p = p(Edge::MergeConcat)?;
            let body = qconv(&x, xp, &l[plan.body], cat_p, false)?;
            let up = qconv(lr, input_p, &l[plan.upsample], cat_p, false)?;
            let cat = Tensor::channel_concat(&[body, up])?;
            qconv(&cat, cat_p, &l[m], merged_p, false)?
        }
        (MergeMode::Concat, None) => return Err(internal!("missing merge convolution")),
    };
    let shuffled = depth_to_space(&merged, cfg.scale)?;
    // requantizing into [0, 1] output parameters is the clipped ReLU
    Ok(requantize_tensor(&shuffled, merged_p, p(Edge::Output)?))
}

#[cfg(test)]
mod tests {
    use super::super::calibrate::calibrate;
    use super::super::{dequantize_image, quantize_image};
    use super::*;
    use crate::model::presets;
    use crate::ops::nearest_upsample_reference;
    use crate::tensor::Shape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn image(seed: u64, h: usize, w: usize) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(Shape::new(1, h, w, 3), |_, _, _, _| {
            rng.random_range(0.0..1.0)
        })
        .unwrap()
    }

    #[test]
    fn zero_weights_quantize_to_zero_point() {
        let m = Model::<f32>::zeroed(XcatConfig::default()).unwrap();
        let cal = calibrate(&m, &[image(1, 5, 5)]).unwrap();
        let q = quantize_model(&m, &cal).unwrap();
        for l in q.layers().iter().filter(|l| l.trainable) {
            assert!(l
                .weights
                .iter()
                .all(|&w| w as i32 == l.weight_params.zero_point));
            assert!(l.bias.iter().all(|&b| b == 0));
        }
    }

    #[test]
    fn fixed_kernel_is_exact() {
        let m = Model::<f32>::build(XcatConfig::default(), 3).unwrap();
        let cal = calibrate(&m, &[image(1, 5, 5)]).unwrap();
        let q = quantize_model(&m, &cal).unwrap();
        let fixed = q.layers().iter().find(|l| !l.trainable).unwrap();
        let float = m.layers().iter().find(|l| !l.trainable).unwrap();
        assert_eq!(fixed.dequantized_kernel(), float.kernel);
    }

    #[test]
    fn zero_features_reproduce_nearest_upsample() {
        for name in ["xcat-baseline", "B", "D", "G", "t3-21x7-m4-straight"] {
            let m = Model::<f32>::zeroed(presets::preset(name).unwrap()).unwrap();
            let img = image(7, 6, 5);
            // a dim calibration image must not narrow the output path
            let dim = img.map(|v| v * 0.4);
            let q = quantize_model(&m, &calibrate(&m, &[dim]).unwrap()).unwrap();
            let u8img = quantize_image(&img);
            let out = qforward(&q, &u8img).unwrap();
            assert_eq!(
                out,
                nearest_upsample_reference(&u8img, 3).unwrap(),
                "{name}"
            );
        }
    }

    #[test]
    fn zero_image_maps_to_zero_image() {
        let m = Model::<f32>::build(XcatConfig::default(), 4).unwrap();
        let q = quantize_model(&m, &calibrate(&m, &[image(1, 6, 6)]).unwrap()).unwrap();
        let z = Tensor::<u8>::zeros(Shape::new(1, 4, 4, 3)).unwrap();
        let out = qforward(&q, &z).unwrap();
        assert!(out.data().iter().all(|&v| v == 0));
    }

    #[test]
    fn tracks_float_model() {
        for name in presets::names() {
            let m = Model::<f32>::build(presets::preset(&name).unwrap(), 6).unwrap();
            let img = image(2, 8, 8);
            let q =
                quantize_model(&m, &calibrate(&m, std::slice::from_ref(&img)).unwrap()).unwrap();
            let fq: Tensor<f32> = dequantize_image(&qforward(&q, &quantize_image(&img)).unwrap());
            let f = m.forward(&img).unwrap();
            let err = fq
                .data()
                .iter()
                .zip(f.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f32::max);
            assert!(err < 0.35, "{name}: {err}");
        }
    }

    #[test]
    fn missing_edge_params_is_internal_error() {
        let m = Model::<f32>::build(XcatConfig::default(), 4).unwrap();
        let q = quantize_model(&m, &calibrate(&m, &[image(1, 4, 4)]).unwrap()).unwrap();
        let mut params = q.edge_params().to_vec();
        params.pop();
        let broken = QModel::from_parts(*q.config(), q.layers().to_vec(), params).unwrap();
        let r = qforward(&broken, &Tensor::zeros(Shape::new(1, 4, 4, 3)).unwrap());
        assert!(matches!(r, Err(crate::Error::Internal(_))));
    }

    #[test]
    fn qforward_is_deterministic() {
        let m = Model::<f32>::build(XcatConfig::default(), 4).unwrap();
        let img = image(3, 7, 7);
        let q = quantize_model(&m, &calibrate(&m, std::slice::from_ref(&img)).unwrap()).unwrap();
        let u = quantize_image(&img);
        assert_eq!(qforward(&q, &u).unwrap(), qforward(&q, &u).unwrap());
    }
}
