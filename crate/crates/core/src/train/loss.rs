use crate::error::{invalid, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Training objective.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Loss {
    Charbonnier { eps: f64 },
    Mse,
}

impl Loss {
    /// Mean loss over all elements and its gradient with respect to `pred`.
    pub fn eval<F: Real>(&self, pred: &Tensor<F>, target: &Tensor<F>) -> Result<(f64, Tensor<F>)> {
        match *self {
            Loss::Charbonnier { eps } => charbonnier_loss(pred, target, eps),
            Loss::Mse => mse_loss(pred, target),
        }
    }
}

fn check<F: Real>(pred: &Tensor<F>, target: &Tensor<F>) -> Result<F> {
    if pred.shape() != target.shape() {
        return Err(invalid!(
            "loss: shapes {:?} and {:?} differ",
            pred.shape(),
            target.shape()
        ));
    }
    Ok(F::from_f64(1.0 / pred.data().len() as f64))
}

/// `mean(sqrt(d^2 + eps^2))` with `d = pred - target`.
pub fn charbonnier_loss<F: Real>(
    pred: &Tensor<F>,
    target: &Tensor<F>,
    eps: f64,
) -> Result<(f64, Tensor<F>)> {
    if eps.is_nan() || eps <= 0.0 {
        return Err(invalid!("charbonnier eps must be positive, got {}", eps));
    }
    let inv_n = check(pred, target)?;
    let e2 = F::from_f64(eps * eps);
    let mut sum = 0.0;
    let grad = pred.zip_map(target, |p, t| {
        let d = p - t;
        let r = (d * d + e2).sqrt();
        sum += r.to_f64();
        d / r * inv_n
    })?;
    Ok((sum * inv_n.to_f64(), grad))
}

pub fn mse_loss<F: Real>(pred: &Tensor<F>, target: &Tensor<F>) -> Result<(f64, Tensor<F>)> {
    let inv_n = check(pred, target)?;
    let two = F::from_f64(2.0);
    let mut sum = 0.0;
    let grad = pred.zip_map(target, |p, t| {
        let d = p - t;
        sum += d.to_f64() * d.to_f64();
        two * d * inv_n
    })?;
    Ok((sum * inv_n.to_f64(), grad))
}
