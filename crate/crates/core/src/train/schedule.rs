use super::TrainConfig;
use crate::error::{invalid, Result};

/// Learning rate of a 1-based `epoch`: linear from `lr_init` at epoch 1 to
/// `lr_peak` at `warmup_epochs`, then linear to `lr_final` at the last epoch.
pub fn lr_schedule(cfg: &TrainConfig, epoch: usize) -> Result<f64> {
    if epoch == 0 || epoch > cfg.epochs {
        return Err(invalid!("epoch {} outside 1..={}", epoch, cfg.epochs));
    }
    let warm = cfg.warmup_epochs.max(1);
    if epoch <= warm {
        return Ok(lerp(cfg.lr_init, cfg.lr_peak, epoch - 1, warm - 1));
    }
    Ok(lerp(
        cfg.lr_peak,
        cfg.lr_final,
        epoch - warm,
        cfg.epochs - warm,
    ))
}

/// `a` at step 0, `b` at step `steps`, exact at both ends.
fn lerp(a: f64, b: f64, step: usize, steps: usize) -> f64 {
    if step >= steps {
        return b;
    }
    if step == 0 {
        return a;
    }
    a + (b - a) * step as f64 / steps as f64
}
