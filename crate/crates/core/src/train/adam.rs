use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ModelGrads;
use crate::error::{invalid, Result};
use crate::model::Model;
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments of one trainable layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub kernel_m: Vec<f64>,
    pub kernel_v: Vec<f64>,
    pub bias_m: Vec<f64>,
    pub bias_v: Vec<f64>,
}

/// Optimizer state: moments for trainable layers only, step counter and the
/// sampling RNG.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub moments: Vec<Option<Moments>>,
    pub step: u64,
    pub rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new<F: Real>(model: &Model<F>, seed: u64) -> Self {
        let moments = model
            .layers()
            .iter()
            .map(|l| {
                l.trainable.then(|| Moments {
                    kernel_m: vec![0.0; l.kernel.len()],
                    kernel_v: vec![0.0; l.kernel.len()],
                    bias_m: vec![0.0; l.bias.len()],
                    bias_v: vec![0.0; l.bias.len()],
                })
            })
            .collect();
        Self {
            moments,
            step: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

fn update<F: Real>(
    p: &mut [F],
    g: &[F],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    c: &AdamConfig,
    (bc1, bc2): (f64, f64),
) {
    for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
        let g = g.to_f64();
        *m = c.beta1 * *m + (1.0 - c.beta1) * g;
        *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
        let step = lr * (*m / bc1) / ((*v / bc2).sqrt() + c.eps);
        *p = F::from_f64(p.to_f64() - step);
    }
}

/// One Adam update of every trainable layer with bias-corrected moments.
pub fn adam_step<F: Real>(
    state: &mut TrainState,
    model: &mut Model<F>,
    grads: &ModelGrads<F>,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if grads.layers.len() != state.moments.len() || model.layers().len() != state.moments.len() {
        return Err(invalid!("optimizer state does not match the model"));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (i, (mom, g)) in state.moments.iter_mut().zip(&grads.layers).enumerate() {
        let (Some(mom), Some(g)) = (mom.as_mut(), g.as_ref()) else {
            continue;
        };
        let (kernel, bias) = model
            .params_mut(i)
            .ok_or_else(|| invalid!("layer {} has optimizer state but is not trainable", i))?;
        if kernel.len() != g.kernel.len() || bias.len() != g.bias.len() {
            return Err(invalid!("gradient of layer {} has the wrong length", i));
        }
        update(
            kernel,
            &g.kernel,
            &mut mom.kernel_m,
            &mut mom.kernel_v,
            lr,
            cfg,
            (bc1, bc2),
        );
        update(
            bias,
            &g.bias,
            &mut mom.bias_m,
            &mut mom.bias_v,
            lr,
            cfg,
            (bc1, bc2),
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::XcatConfig;

    #[test]
    fn zero_gradient_keeps_parameters() {
        let mut m = Model::<f32>::build(XcatConfig::default(), 3).unwrap();
        let before = m.clone();
        let mut st = TrainState::new(&m, 0);
        let g = ModelGrads::zeros_like(&m);
        adam_step(&mut st, &mut m, &g, 1e-3, &AdamConfig::default()).unwrap();
        assert_eq!(m.layers(), before.layers());
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr_against_the_sign() {
        let mut m = Model::<f64>::zeroed(XcatConfig::default()).unwrap();
        let mut st = TrainState::new(&m, 0);
        let mut g = ModelGrads::zeros_like(&m);
        let gl = g.layers[0].as_mut().unwrap();
        gl.kernel[0] = 0.5;
        gl.kernel[1] = -2.0;
        adam_step(&mut st, &mut m, &g, 1e-2, &AdamConfig::default()).unwrap();
        assert!((m.layers()[0].kernel[0] + 1e-2).abs() < 1e-9);
        assert!((m.layers()[0].kernel[1] - 1e-2).abs() < 1e-9);
        let fixed = m.layer_specs().iter().position(|s| !s.trainable).unwrap();
        assert!(st.moments[fixed].is_none());
    }
}
