//! Training: losses, backpropagation through the recorded forward pass, Adam,
//! the warm-up learning-rate schedule, patch augmentation and the epoch loop.

mod adam;
mod augment;
mod backward;
mod gradcheck;
mod loss;
mod schedule;

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

pub use adam::{adam_step, AdamConfig, Moments, TrainState};
pub use augment::{augment, AugmentChoice};
pub use backward::{backward, ModelGrads};
pub use gradcheck::{gradient_check, relative_error, GradCheckRow};
pub use loss::{charbonnier_loss, mse_loss, Loss};
pub use schedule::lr_schedule;

use crate::error::{invalid, Result};
use crate::eval::ImagePair;
use crate::model::Model;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Stage {
    One,
    Two,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub stage: Stage,
    pub loss: Loss,
    pub epochs: usize,
    pub minibatches_per_epoch: usize,
    pub batch_size: usize,
    pub lr_init: f64,
    pub lr_peak: f64,
    pub lr_final: f64,
    pub warmup_epochs: usize,
    pub seed: u64,
    /// HR patch side; the LR patch is `crop_hr / scale`.
    pub crop_hr: usize,
    pub intensities: Vec<f32>,
    pub adam: AdamConfig,
}

impl TrainConfig {
    pub fn stage_one() -> Self {
        Self {
            stage: Stage::One,
            loss: Loss::Charbonnier { eps: 0.1 },
            epochs: 50,
            minibatches_per_epoch: 10_000,
            batch_size: 16,
            lr_init: 1e-3,
            lr_peak: 2.5e-3,
            lr_final: 1e-4,
            warmup_epochs: 5,
            seed: 0,
            crop_hr: 96,
            intensities: vec![1.0, 0.7, 0.5],
            adam: AdamConfig::default(),
        }
    }

    /// Fine-tuning from stage one weights with MSE and lower rates.
    pub fn stage_two() -> Self {
        Self {
            stage: Stage::Two,
            loss: Loss::Mse,
            lr_init: 1e-4,
            lr_peak: 1.25e-3,
            lr_final: 1e-4,
            ..Self::stage_one()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.minibatches_per_epoch == 0 || self.batch_size == 0 {
            return Err(invalid!("epochs, minibatches and batch size must be >= 1"));
        }
        if self.crop_hr == 0 || self.intensities.is_empty() {
            return Err(invalid!("crop size and intensity set must be non-empty"));
        }
        for lr in [self.lr_init, self.lr_peak, self.lr_final] {
            if !lr.is_finite() || lr < 0.0 {
                return Err(invalid!(
                    "learning rate {} is not a finite non-negative number",
                    lr
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
}

/// Draws a minibatch of augmented patch pairs.
pub fn sample_batch<R: Rng>(
    data: &[ImagePair],
    cfg: &TrainConfig,
    scale: usize,
    rng: &mut R,
) -> Result<(Tensor<f32>, Tensor<f32>)> {
    if data.is_empty() {
        return Err(invalid!("training set is empty"));
    }
    let mut lrs = Vec::with_capacity(cfg.batch_size);
    let mut hrs = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.batch_size {
        let pair = &data[rng.random_range(0..data.len())];
        let (lr, hr) = augment(pair, rng, cfg.crop_hr, scale, &cfg.intensities)?;
        lrs.push(lr);
        hrs.push(hr);
    }
    Ok((Tensor::batch_concat(&lrs)?, Tensor::batch_concat(&hrs)?))
}

/// One optimizer step on a prepared batch; returns the batch loss.
pub fn train_step(
    model: &mut Model<f32>,
    state: &mut TrainState,
    cfg: &TrainConfig,
    lr_batch: &Tensor<f32>,
    hr_batch: &Tensor<f32>,
    lr: f64,
) -> Result<f64> {
    let trace = model.trace(lr_batch)?;
    let (loss, grad) = cfg.loss.eval(&trace.output, hr_batch)?;
    let (grads, _) = backward(model, &trace, &grad, false)?;
    adam_step(state, model, &grads, lr, &cfg.adam)?;
    Ok(loss)
}

/// Runs the full schedule, calling `on_epoch` after every epoch. Returns the
/// per-epoch statistics.
pub fn train(
    model: &mut Model<f32>,
    cfg: &TrainConfig,
    data: &[ImagePair],
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<Vec<EpochStats>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(invalid!("training set is empty"));
    }
    let scale = model.config().scale;
    let lr_crop = cfg.crop_hr / scale;
    if let Some(p) = data
        .iter()
        .find(|p| p.lr.shape().h < lr_crop || p.lr.shape().w < lr_crop)
    {
        return Err(invalid!(
            "image {} is smaller than the {} px training crop",
            p.id,
            cfg.crop_hr
        ));
    }
    let mut state = TrainState::new(model, cfg.seed);
    let mut stats = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let lr = lr_schedule(cfg, epoch)?;
        let mut total = 0.0;
        for _ in 0..cfg.minibatches_per_epoch {
            let (x, y) = sample_batch(data, cfg, scale, &mut state.rng)?;
            total += train_step(model, &mut state, cfg, &x, &y, lr)?;
        }
        let s = EpochStats {
            epoch,
            lr,
            mean_loss: total / cfg.minibatches_per_epoch as f64,
        };
        on_epoch(&s);
        stats.push(s);
    }
    Ok(stats)
}
