use alloc::vec::Vec;

use crate::error::{internal, invalid, Result};
use crate::model::{
    BlockKind, BlockTrace, MergeMode, MixMode, Model, PostBlockConv, Trace, XcatConfig,
};
use crate::tensor::Tensor;

/// Activation edge of the network, i.e. a tensor that gets its own
/// quantization parameters. Edges are observed after hidden activations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Edge {
    Input,
    Head,
    /// Concatenated branch outputs of a block whose mix is a 1x1 convolution.
    BlockConcat(usize),
    /// Block output. For concatenation mixes both branches write straight into
    /// this edge, so concat and rotation only move bytes.
    Block(usize),
    Post,
    Body,
    Upsample,
    MergeConcat,
    Merged,
    Output,
}

/// Edges of a configuration in forward order.
pub fn edges(cfg: &XcatConfig) -> Vec<Edge> {
    let mut v = alloc::vec![Edge::Input, Edge::Head];
    for b in 0..cfg.blocks {
        if cfg.block_kind == BlockKind::HxBlock && cfg.mix_mode == MixMode::Conv1x1 {
            v.push(Edge::BlockConcat(b));
        }
        v.push(Edge::Block(b));
    }
    if cfg.post_block_conv != PostBlockConv::None {
        v.push(Edge::Post);
    }
    v.push(Edge::Body);
    v.push(Edge::Upsample);
    if cfg.merge_mode == MergeMode::Concat {
        v.push(Edge::MergeConcat);
    }
    v.push(Edge::Merged);
    v.push(Edge::Output);
    v
}

pub(crate) fn edge_tensor<F>(trace: &Trace<F>, edge: Edge) -> Result<&Tensor<F>> {
    let missing = || internal!("trace has no tensor for edge {:?}", edge);
    Ok(match edge {
        Edge::Input => &trace.input,
        Edge::Head => &trace.head,
        Edge::BlockConcat(b) => match trace.blocks.get(b).ok_or_else(missing)? {
            BlockTrace::Hetero { concat, .. } => concat,
            BlockTrace::Plain { .. } => return Err(missing()),
        },
        Edge::Block(b) => trace.blocks.get(b).ok_or_else(missing)?.out(),
        Edge::Post => trace.post.as_ref().ok_or_else(missing)?,
        Edge::Body => &trace.body,
        Edge::Upsample => &trace.upsample,
        Edge::MergeConcat => trace.merge_concat.as_ref().ok_or_else(missing)?,
        Edge::Merged => &trace.merged,
        Edge::Output => &trace.output,
    })
}

/// Running `(min, max)` per edge, always containing zero.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationRecord {
    pub edges: Vec<Edge>,
    pub ranges: Vec<(f32, f32)>,
}

impl CalibrationRecord {
    pub fn empty(cfg: &XcatConfig) -> Self {
        let edges = edges(cfg);
        let ranges = alloc::vec![(0.0, 0.0); edges.len()];
        Self { edges, ranges }
    }

    pub fn range(&self, edge: Edge) -> Option<(f32, f32)> {
        self.edges
            .iter()
            .position(|&e| e == edge)
            .map(|i| self.ranges[i])
    }

    pub fn observe(&mut self, trace: &Trace<f32>) -> Result<()> {
        for (edge, range) in self.edges.iter().zip(self.ranges.iter_mut()) {
            for &v in edge_tensor(trace, *edge)?.data() {
                range.0 = range.0.min(v);
                range.1 = range.1.max(v);
            }
        }
        Ok(())
    }

    /// Union of two records over the same edges.
    pub fn merge(&self, other: &Self) -> Result<Self> {
        if self.edges != other.edges {
            return Err(invalid!("calibration records cover different edges"));
        }
        let ranges = self
            .ranges
            .iter()
            .zip(&other.ranges)
            .map(|(a, b)| (a.0.min(b.0), a.1.max(b.1)))
            .collect();
        Ok(Self {
            edges: self.edges.clone(),
            ranges,
        })
    }
}

/// Runs the float model over every image and records per-edge ranges.
pub fn calibrate(model: &Model<f32>, images: &[Tensor<f32>]) -> Result<CalibrationRecord> {
    if images.is_empty() {
        return Err(invalid!("calibration needs at least one image"));
    }
    let mut rec = CalibrationRecord::empty(model.config());
    for img in images {
        rec.observe(&model.trace(img)?)?;
    }
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::presets;
    use crate::tensor::Shape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn image(seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(Shape::new(1, 6, 7, 3), |_, _, _, _| {
            rng.random_range(0.0..1.0)
        })
        .unwrap()
    }

    #[test]
    fn edge_lists() {
        let e = edges(&XcatConfig::default());
        assert_eq!(
            e,
            alloc::vec![
                Edge::Input,
                Edge::Head,
                Edge::Block(0),
                Edge::Block(1),
                Edge::Post,
                Edge::Body,
                Edge::Upsample,
                Edge::Merged,
                Edge::Output
            ]
        );
        let m = edges(&presets::preset("M").unwrap());
        assert!(m.contains(&Edge::MergeConcat));
        assert!(!edges(&presets::preset("G").unwrap()).contains(&Edge::Post));
        assert!(edges(&presets::preset("B").unwrap()).contains(&Edge::BlockConcat(1)));
    }

    #[test]
    fn every_edge_is_observed_for_every_preset() {
        for name in presets::names() {
            let m = Model::<f32>::build(presets::preset(&name).unwrap(), 1).unwrap();
            let rec = calibrate(&m, &[image(1)]).unwrap();
            assert_eq!(rec.edges, edges(m.config()));
        }
    }

    #[test]
    fn zero_image_gives_zero_ranges() {
        let m = Model::<f32>::build(XcatConfig::default(), 1).unwrap();
        let z = Tensor::zeros(Shape::new(1, 4, 4, 3)).unwrap();
        let rec = calibrate(&m, &[z]).unwrap();
        assert_eq!(rec.range(Edge::Input), Some((0.0, 0.0)));
        assert_eq!(rec.range(Edge::Upsample), Some((0.0, 0.0)));
        // biases are zero at init, so every edge is exactly zero
        assert!(rec.ranges.iter().all(|&r| r == (0.0, 0.0)));
    }

    #[test]
    fn two_images_merge_like_a_monoid() {
        let m = Model::<f32>::build(XcatConfig::default(), 1).unwrap();
        let (a, b) = (image(1), image(2));
        let both = calibrate(&m, &[a.clone(), b.clone()]).unwrap();
        let merged = calibrate(&m, &[a])
            .unwrap()
            .merge(&calibrate(&m, &[b]).unwrap())
            .unwrap();
        assert_eq!(both, merged);
        for &(lo, hi) in &both.ranges {
            assert!(lo <= 0.0 && 0.0 <= hi && lo <= hi);
        }
        let out = both.range(Edge::Output).unwrap();
        assert!(out.0 >= 0.0 && out.1 <= 1.0);
    }

    #[test]
    fn empty_set_rejected() {
        let m = Model::<f32>::build(XcatConfig::default(), 1).unwrap();
        assert!(calibrate(&m, &[]).is_err());
    }
}
