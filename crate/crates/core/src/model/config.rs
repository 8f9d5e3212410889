use alloc::format;

use crate::error::{Error, Result};

/// How the two branch outputs of a block are recombined.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum MixMode {
    /// Concatenate, then rotate the channel axis by a quarter of its length.
    CrossConcat,
    /// Concatenate only.
    StraightConcat,
    /// Concatenate, then a trainable `F -> F` 1x1 convolution.
    Conv1x1,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum RotateDirection {
    /// Channel `i` moves to `i + F/4`.
    Forward,
    /// Channel `i` moves to `i - F/4`.
    Backward,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum BlockKind {
    /// Split into two branches with their own kernel sizes, then mix.
    HxBlock,
    /// A single `F -> F` 3x3 convolution followed by the hidden activation.
    PlainConv3x3,
}

/// Convolution between the last block and the output convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum PostBlockConv {
    Conv3x3,
    Conv1x1,
    None,
}

/// How the feature path meets the fixed upsampling path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum MergeMode {
    Add,
    /// Channel concat of both 27-channel tensors followed by a trainable
    /// `54 -> 27` 1x1 merge convolution.
    Concat,
}

/// Architecture hyperparameters. [`XcatConfig::default`] is the baseline
/// network: two blocks split 21/7 with 1x1/3x3 kernels, cross concatenation,
/// a 3x3 convolution after the last block and additive merge at scale 3.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct XcatConfig {
    /// Number of blocks (`m`).
    pub blocks: usize,
    /// Channels routed to branch 0 and branch 1.
    pub split: (usize, usize),
    /// Square kernel size of branch 0 and branch 1, each 1 or 3.
    pub branch_kernels: (usize, usize),
    pub mix_mode: MixMode,
    pub rotate_direction: RotateDirection,
    pub block_kind: BlockKind,
    pub post_block_conv: PostBlockConv,
    pub merge_mode: MergeMode,
    pub scale: usize,
    pub image_channels: usize,
    /// ReLU after the input convolution and after every block convolution.
    pub hidden_activation: bool,
}

impl Default for XcatConfig {
    fn default() -> Self {
        Self {
            blocks: 2,
            split: (21, 7),
            branch_kernels: (1, 3),
            mix_mode: MixMode::CrossConcat,
            rotate_direction: RotateDirection::Forward,
            block_kind: BlockKind::HxBlock,
            post_block_conv: PostBlockConv::Conv3x3,
            merge_mode: MergeMode::Add,
            scale: 3,
            image_channels: 3,
            hidden_activation: true,
        }
    }
}

impl XcatConfig {
    pub fn feature_channels(&self) -> usize {
        self.split.0 + self.split.1
    }

    /// Channels fed to depth-to-space: `image_channels * scale^2`.
    pub fn out_channels_before_d2s(&self) -> usize {
        self.image_channels * self.scale * self.scale
    }

    /// Signed channel shift applied by cross concatenation.
    pub fn rotation_amount(&self) -> isize {
        let quarter = (self.feature_channels() / 4) as isize;
        match self.rotate_direction {
            RotateDirection::Forward => quarter,
            RotateDirection::Backward => -quarter,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &'static str, reason: alloc::string::String| {
            Err(Error::InvalidConfig { field, reason })
        };
        if self.split.0 == 0 || self.split.1 == 0 {
            return bad(
                "split",
                format!("both sides must be >= 1, got {:?}", self.split),
            );
        }
        for k in [self.branch_kernels.0, self.branch_kernels.1] {
            if !matches!(k, 1 | 3) {
                return bad(
                    "branch_kernels",
                    format!("kernel sizes must be 1 or 3, got {:?}", self.branch_kernels),
                );
            }
        }
        if self.block_kind == BlockKind::HxBlock
            && self.mix_mode == MixMode::CrossConcat
            && !self.feature_channels().is_multiple_of(4)
        {
            return bad(
                "split",
                format!(
                    "cross concatenation needs feature channels divisible by 4, got {}",
                    self.feature_channels()
                ),
            );
        }
        if self.scale == 0 {
            return bad("scale", "must be >= 1".into());
        }
        if self.image_channels == 0 {
            return bad("image_channels", "must be >= 1".into());
        }
        Ok(())
    }
}
